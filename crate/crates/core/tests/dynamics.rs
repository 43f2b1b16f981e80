use std::f64::consts::PI;
use std::sync::Arc;

use qmm_detector::bloch::{
    coherent_photon_number, integrate_bloch, BlochRun, DriveProfile, SpinState, Tunneling,
};
use qmm_detector::master::{run_uncoupled_ensemble, ChainRun};
use qmm_detector::model::{derive_seed, LindbladChannel, LindbladSet, ModelParams};
use qmm_detector::operator::{
    annihilation, creation, number, pauli, HilbertLayout, Matrix, Operator, PauliAxis, StateVector,
    C64, I,
};
use qmm_detector::qsd::{propagate, Observable, QsdSystem, Stepper, TimeGrid};

fn qubit_system(gamma_relax: f64, gamma_phase: f64) -> (QsdSystem, StateVector, Observable) {
    let layout = HilbertLayout::qubits(1).unwrap().shared();
    let op = |m: Matrix| Operator::new(Arc::clone(&layout), m).unwrap();
    let h = op(&(&pauli(PauliAxis::Z) * -0.5) + &(&pauli(PauliAxis::X) * -0.2));
    let excited = pauli(PauliAxis::Lowering).matmul(&pauli(PauliAxis::Raising));
    let lindblads = LindbladSet {
        channels: vec![
            LindbladChannel {
                label: "relax".into(),
                operator: op(&pauli(PauliAxis::Raising) * (2.0 * gamma_relax).sqrt()),
                rate: gamma_relax,
            },
            LindbladChannel {
                label: "dephase".into(),
                operator: op(&excited * (2.0 * gamma_phase).sqrt()),
                rate: gamma_phase,
            },
        ],
    };
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let psi = StateVector::new(
        Arc::clone(&layout),
        vec![C64::new(s, 0.0), C64::new(0.0, s)],
    )
    .unwrap();
    let sz = Observable::new("sz", &op(pauli(PauliAxis::Z)));
    (QsdSystem::new(&h, &lindblads).unwrap(), psi, sz)
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    cov / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
}

#[test]
fn pre_renormalisation_norm_error_is_first_order_in_dt() {
    let (sys, psi, _) = qubit_system(0.05, 0.03);
    let dts = [1e-2, 5e-3, 2.5e-3];
    let rms: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let grid = TimeGrid {
                dt,
                n_steps: (20.0 / dt) as usize,
                stride: 100,
            };
            let runs = 20;
            let total: f64 = (0..runs)
                .map(|s| {
                    let p = propagate(&sys, &psi, &grid, &[], None, Stepper::Rk4Drift, s).unwrap();
                    assert!(p.norm_drift.iter().all(|&e| e < 1e-9));
                    p.pre_norm.rms.powi(2)
                })
                .sum();
            (total / runs as f64).sqrt()
        })
        .collect();
    // The Itô correction |dξ|² − dt enters the squared norm at first order.
    let k = slope(&dts, &rms);
    assert!((k - 1.0).abs() < 0.1, "slope {k}, rms {rms:?}");
}

#[test]
fn halving_dt_moves_ensemble_means_within_standard_error() {
    let (sys, psi, sz) = qubit_system(0.05, 0.03);
    let final_sz = |dt: f64, seed_base: u64| -> Vec<f64> {
        let grid = TimeGrid {
            dt,
            n_steps: (10.0 / dt).round() as usize,
            stride: (10.0 / dt).round() as usize,
        };
        (0..400)
            .map(|i| {
                let seed = derive_seed(seed_base, 1, i);
                let p = propagate(
                    &sys,
                    &psi,
                    &grid,
                    std::slice::from_ref(&sz),
                    None,
                    Stepper::Rk4Drift,
                    seed,
                )
                .unwrap();
                *p.values[0].last().unwrap()
            })
            .collect()
    };
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    };
    let (m1, se1) = stats(&final_sz(0.02, 5));
    let (m2, se2) = stats(&final_sz(0.01, 6));
    let se = (se1 * se1 + se2 * se2).sqrt();
    assert!((m1 - m2).abs() < 2.0 * se, "{m1} vs {m2}, se {se}");
}

#[test]
fn driven_oscillator_photon_number_matches_closed_form() {
    let levels = 20;
    let layout = HilbertLayout::new(0, Some(levels), None).unwrap();
    assert_eq!(layout.dim(), levels);
    let quad = &annihilation(levels).unwrap() + &creation(levels).unwrap();
    let n_op = number(levels).unwrap();
    for profile in [
        DriveProfile::Constant { value: 0.1 },
        DriveProfile::Cosine {
            amplitude: 0.4,
            frequency: 0.3,
            phase: 0.2,
        },
    ] {
        // i dψ/dt = f_e(t)(a + a†)ψ  ⇒  α(t) = −i∫f_e.
        let rhs = |t: f64, x: &[C64]| -> Vec<C64> {
            quad.apply(x)
                .into_iter()
                .map(|v| -I * profile.envelope(t) * v)
                .collect()
        };
        let mut psi = vec![C64::new(0.0, 0.0); levels];
        psi[0] = C64::new(1.0, 0.0);
        let dt = 0.005;
        let axpy = |x: &[C64], k: &[C64], h: f64| -> Vec<C64> {
            x.iter().zip(k).map(|(a, b)| a + b * h).collect()
        };
        for step in 0..4000 {
            let t = step as f64 * dt;
            let k1 = rhs(t, &psi);
            let k2 = rhs(t + 0.5 * dt, &axpy(&psi, &k1, 0.5 * dt));
            let k3 = rhs(t + 0.5 * dt, &axpy(&psi, &k2, 0.5 * dt));
            let k4 = rhs(t + dt, &axpy(&psi, &k3, dt));
            for i in 0..levels {
                psi[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (dt / 6.0);
            }
            if (step + 1) % 400 == 0 {
                let t = (step + 1) as f64 * dt;
                let n: f64 = psi
                    .iter()
                    .zip(n_op.apply(&psi))
                    .map(|(a, b)| (a.conj() * b).re)
                    .sum();
                let expect = coherent_photon_number(&profile, t);
                assert!(
                    (n - expect).abs() < 1e-4,
                    "{profile:?} t={t}: {n} vs {expect}"
                );
            }
        }
    }
}

#[test]
fn bloch_norm_drift_per_period_is_tiny() {
    let periods = 50;
    let steps = 200;
    let n = 4;
    let initial = SpinState::x_polarised(n, 1.0);
    let drive = DriveProfile::Cosine {
        amplitude: 0.05,
        frequency: 0.8,
        phase: 0.0,
    };
    for noise_d in [0.0, 1e-6, 1e-4] {
        let run = BlochRun {
            dt: 2.0 * PI / steps as f64,
            n_steps: periods * steps,
            stride: steps,
            noise_d,
            seed: 11,
            tunneling: Tunneling::Fixed { value: 0.3 },
        };
        let trace = integrate_bloch(&initial, &vec![0.2; n], &drive, &run).unwrap();
        let per_period = trace.max_norm_error / periods as f64;
        assert!(
            per_period < 1e-8,
            "D = {noise_d}: {per_period:e} per period"
        );
    }
}

#[test]
fn noise_averaged_sz_variance_falls_with_realizations() {
    let params = ModelParams {
        noise_d: 0.02,
        ..ModelParams::chain(1)
    };
    let groups = 10;
    let per_group = 20;
    let traces: Vec<Vec<f64>> = (0..groups * per_group)
        .map(|r| {
            let run = ChainRun {
                duration: 20.0 * 2.0 * PI,
                dt: 2.0 * PI / 200.0,
                stride: 20,
                seed: derive_seed(3, 0x51, r as u64),
                substeps: 1,
            };
            run_uncoupled_ensemble(&params, 1, &run).unwrap().sz
        })
        .collect();
    let len = traces[0].len();
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let (mut single, mut grouped) = (0.0, 0.0);
    // Skip the start, where every realization shares the initial state.
    for k in len / 4..len {
        let column: Vec<f64> = traces.iter().map(|t| t[k]).collect();
        let means: Vec<f64> = column
            .chunks(per_group)
            .map(|c| c.iter().sum::<f64>() / per_group as f64)
            .collect();
        single += var(&column);
        grouped += var(&means);
    }
    let ratio = grouped / (single / per_group as f64);
    assert!((0.6..1.6).contains(&ratio), "ratio {ratio}");
}
