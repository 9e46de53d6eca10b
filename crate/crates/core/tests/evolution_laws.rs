use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use periodic_regulation::evolution::EvolutionFamily;
use periodic_regulation::plant::{constant, MatrixFn, PeriodicPlant, PlantDims};
use proptest::prelude::*;

const TAU: f64 = 2.0 * PI;

/// `A(t) = -I + A₀/2 + A₁ cos t + A₂ sin 2t` from 27 entries.
fn smooth_plant(c: &[f64]) -> PeriodicPlant {
    let m = |k: usize| DMatrix::from_column_slice(3, 3, &c[9 * k..9 * k + 9]);
    let (a0, a1, a2) = (m(0), m(1), m(2));
    let a: MatrixFn = Arc::new(move |t| -DMatrix::identity(3, 3) + &a0 * 0.5 + &a1 * t.cos() + &a2 * (2.0 * t).sin());
    let dims = PlantDims {
        states: 3,
        inputs: 1,
        disturbances: 1,
        outputs: 1,
    };
    PeriodicPlant::new(
        TAU,
        dims,
        a,
        constant(DMatrix::from_element(3, 1, 1.0)),
        constant(DMatrix::zeros(3, 1)),
        constant(DMatrix::from_element(1, 3, 1.0)),
        constant(DMatrix::zeros(1, 1)),
        vec![],
    )
    .unwrap()
}

fn relative(a: &DMatrix<f64>, b: &DMatrix<f64>, scale: f64) -> f64 {
    (a - b).norm() / scale.max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cocycle_and_periodicity_hold(
        c in prop::collection::vec(-1.0f64..1.0, 27),
        r in 0.0f64..TAU,
        gaps in (0.1f64..3.0, 0.1f64..3.0),
    ) {
        let ev = EvolutionFamily::new(smooth_plant(&c));
        let s = r + gaps.0;
        let t = s + gaps.1;
        let u_tr = ev.transition(t, r).unwrap();
        let u_ts = ev.transition(t, s).unwrap();
        let u_sr = ev.transition(s, r).unwrap();
        let cocycle = relative(&u_tr, &(&u_ts * &u_sr), u_ts.norm() * u_sr.norm());
        prop_assert!(cocycle <= 1e-8, "cocycle residual {cocycle:e}");
        let shifted = ev.transition(t + TAU, s + TAU).unwrap();
        let periodicity = relative(&shifted, &u_ts, u_ts.norm());
        prop_assert!(periodicity <= 1e-8, "periodicity residual {periodicity:e}");
        prop_assert!(relative(&ev.transition(s, s).unwrap(), &DMatrix::identity(3, 3), 1.0) == 0.0);
    }
}

/// `ẋ = -(1 + cos t)x` has `x(t) = e^{-(t + sin t)} x₀`.
fn scalar_plant() -> PeriodicPlant {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    PeriodicPlant::new(
        TAU,
        PlantDims {
            states: 1,
            inputs: 1,
            disturbances: 1,
            outputs: 1,
        },
        Arc::new(|t| DMatrix::from_element(1, 1, -(1.0 + t.cos()))),
        constant(one(0.0)),
        constant(one(0.0)),
        constant(one(1.0)),
        constant(one(0.0)),
        vec![],
    )
    .unwrap()
}

#[test]
fn propagation_error_is_fourth_order() {
    let t: f64 = 5.0;
    let exact = (-(t + t.sin())).exp();
    let errors: Vec<f64> = [32usize, 64, 128, 256]
        .iter()
        .map(|&n| {
            let ev = EvolutionFamily::with_step(scalar_plant(), TAU / n as f64);
            let x = ev.propagate(0.0, t, &DVector::from_element(1, 1.0), None, None).unwrap();
            (x[0] - exact).abs()
        })
        .collect();
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((14.0..=18.0).contains(&ratio), "{errors:?}");
    }
}

#[test]
fn default_step_matches_the_closed_form() {
    let ev = EvolutionFamily::new(scalar_plant());
    for t in [0.3f64, PI, 2.0 * TAU + 1.0] {
        let x = ev.propagate(0.0, t, &DVector::from_element(1, 2.0), None, None).unwrap();
        let exact = 2.0 * (-(t + t.sin())).exp();
        assert!((x[0] - exact).abs() < 1e-12 * exact.max(1.0), "t = {t}");
    }
    let m = ev.monodromy().unwrap()[(0, 0)];
    assert!((m - (-TAU).exp()).abs() < 1e-14);
}
