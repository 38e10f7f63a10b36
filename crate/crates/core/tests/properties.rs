use kgorbit_core::{Model, ModelParams, State};
use proptest::prelude::*;

fn circle(k: usize) -> Model {
    Model::new(ModelParams::circle(0.5, 1, k)).unwrap()
}

fn torus2() -> Model {
    let l = 1.0 / 1.3;
    Model::new(ModelParams {
        m: 0.5,
        p: 1,
        dim: 2,
        cutoff: 3,
        periods: vec![l, 1.0 / l],
    })
    .unwrap()
}

fn quintic(k: usize) -> Model {
    Model::new(ModelParams::circle(0.5, 2, k)).unwrap()
}

/// Coefficients decaying like `1/(1+λ)` so the non-linearity stays moderate.
fn coeffs(model: &Model, raw: &[f64], scale: f64) -> Vec<f64> {
    model
        .table()
        .modes()
        .iter()
        .zip(raw.iter().cycle())
        .map(|(md, r)| scale * r / (1.0 + md.eigenvalue))
        .collect()
}

fn state(model: &Model, ra: &[f64], rb: &[f64], scale: f64) -> State {
    State {
        a: coeffs(model, ra, scale),
        b: coeffs(model, rb, scale),
        t: 0.0,
    }
}

/// `∫ u^e` by an independent uniform rule on a grid finer than the polynomial degree.
fn brute_force_moment(model: &Model, a: &[f64], e: i32) -> f64 {
    let table = model.table();
    let periods = &model.params().periods;
    let n = 4 * (e as usize + 1) * table.cutoff() + 7;
    let dim = table.dim();
    let total = n.pow(dim as u32);
    let mut acc = 0.0;
    let mut x = vec![0.0; dim];
    for idx in 0..total {
        let mut rem = idx;
        for (d, xd) in x.iter_mut().enumerate() {
            *xd = (rem % n) as f64 * periods[d] / n as f64;
            rem /= n;
        }
        let u: f64 = a.iter().enumerate().map(|(k, c)| c * table.basis_at(k, &x)).sum();
        acc += u.powi(e);
    }
    acc / total as f64
}

fn raw_vec() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parseval(raw in raw_vec(), scale in 0.01f64..2.0) {
        for model in [circle(6), torus2()] {
            let a = coeffs(&model, &raw, scale);
            let g = model.table().to_grid(&a).unwrap();
            let mean_sq = model.table().mean(g.iter().map(|v| v * v));
            let norm_sq: f64 = a.iter().map(|v| v * v).sum();
            prop_assert!((mean_sq - norm_sq).abs() <= 1e-13 * norm_sq.max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn transform_round_trip(raw in raw_vec(), scale in 0.01f64..2.0) {
        for model in [circle(9), torus2(), quintic(5)] {
            let a = coeffs(&model, &raw, scale);
            let back = model.table().to_modes(&model.table().to_grid(&a).unwrap()).unwrap();
            for (x, y) in a.iter().zip(&back) {
                prop_assert!((x - y).abs() <= 1e-13 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn dealiased_moments_are_exact(raw in raw_vec(), scale in 0.1f64..1.5) {
        for model in [circle(5), torus2(), quintic(4)] {
            let e = 2 * model.params().p + 2;
            let a = coeffs(&model, &raw, scale);
            let fast = model.table().integrate_power(&a, e).unwrap();
            let slow = brute_force_moment(&model, &a, e as i32);
            prop_assert!((fast - slow).abs() <= 1e-12 * slow.abs().max(1e-12), "{fast} vs {slow}");
        }
    }

    #[test]
    fn energy_is_even_and_reflection_symmetric(ra in raw_vec(), rb in raw_vec(), scale in 0.05f64..1.0) {
        for model in [circle(6), torus2()] {
            let s = state(&model, &ra, &rb, scale);
            let h = model.hamiltonian(&s).unwrap();
            let neg = State { a: s.a.iter().map(|v| -v).collect(), b: s.b.iter().map(|v| -v).collect(), t: 0.0 };
            prop_assert!((model.hamiltonian(&neg).unwrap() - h).abs() <= 1e-13 * h.abs().max(1.0));
            let parity: Vec<f64> = model.table().modes().iter().map(|md| md.parity()).collect();
            let refl = State {
                a: s.a.iter().zip(&parity).map(|(v, p)| v * p).collect(),
                b: s.b.iter().zip(&parity).map(|(v, p)| v * p).collect(),
                t: 0.0,
            };
            prop_assert!((model.hamiltonian(&refl).unwrap() - h).abs() <= 1e-13 * h.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_matches_finite_differences(ra in raw_vec(), rb in raw_vec(), scale in 0.05f64..1.0) {
        for model in [circle(4), quintic(3)] {
            let s = state(&model, &ra, &rb, scale);
            let d = model.rhs(&s).unwrap();
            let h = 1e-5;
            for k in 0..model.mode_count() {
                let mut plus = s.clone();
                let mut minus = s.clone();
                plus.a[k] += h;
                minus.a[k] -= h;
                let dh_da = (model.hamiltonian(&plus).unwrap() - model.hamiltonian(&minus).unwrap()) / (2.0 * h);
                let mut plus = s.clone();
                let mut minus = s.clone();
                plus.b[k] += h;
                minus.b[k] -= h;
                let dh_db = (model.hamiltonian(&plus).unwrap() - model.hamiltonian(&minus).unwrap()) / (2.0 * h);
                // ȧ = ∂H/∂b, ḃ = -∂H/∂a
                prop_assert!((d.a[k] - dh_db).abs() <= 1e-6 * dh_db.abs().max(1.0));
                prop_assert!((d.b[k] + dh_da).abs() <= 1e-6 * dh_da.abs().max(1.0));
            }
        }
    }

    #[test]
    fn energy_decompositions(ra in raw_vec(), rb in raw_vec(), a0 in 0.0f64..1.2, b0 in -0.4f64..0.4, scale in 0.005f64..0.3) {
        for model in [circle(6), torus2(), quintic(4)] {
            let mut s = state(&model, &ra, &rb, scale);
            s.a[0] = a0;
            s.b[0] = b0;
            let e = model.energy_breakdown(&s).unwrap();
            let base = 0.5 * b0 * b0 + 0.5 * model.params().f(a0);
            let tol = 1e-12 * e.h.abs().max(1.0);
            prop_assert!((e.h - (base + e.j + e.r)).abs() <= tol);
            prop_assert!((e.h - (base + e.i + e.r_hat)).abs() <= tol);
            prop_assert!(e.j >= 0.0);
        }
    }

    #[test]
    fn distance_is_a_metric(ra in raw_vec(), rb in raw_vec(), rc in raw_vec(), scale in 0.01f64..1.0) {
        let model = circle(5);
        let x = state(&model, &ra, &rb, scale);
        let y = state(&model, &rb, &rc, scale);
        let z = state(&model, &rc, &ra, scale);
        let dxy = model.dist_x(&x, &y).unwrap();
        let dyz = model.dist_x(&y, &z).unwrap();
        let dxz = model.dist_x(&x, &z).unwrap();
        prop_assert!(dxz <= dxy + dyz + 1e-15);
        prop_assert_eq!(dxy, model.dist_x(&y, &x).unwrap());
        prop_assert_eq!(model.dist_x(&x, &x).unwrap(), 0.0);
    }
}
