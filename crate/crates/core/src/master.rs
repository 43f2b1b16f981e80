//! Deterministic Lindblad evolution.
//!
//! Dense density matrices serve as the reference route (QSD convergence
//! oracle, closed-form checks). The scaling studies run in Pauli-coefficient
//! coordinates Π_k = Tr[ρ P_k], where the Lindbladian becomes a sparse real
//! affine generator built once from the dense route.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{
    build_chain_hamiltonian, build_chain_lindblads, derive_seed, qubit_frame, LindbladSet,
    ModelParams, WhiteNoise,
};
use crate::operator::{
    embed, pauli, HilbertLayout, Matrix, Operator, PauliAxis, StateVector, Subsystem, C64, I, ONE,
};
use crate::parallel::try_map_indexed;
use crate::spectral::{
    dominant_frequency, psd_named, snr, spectral_centroid, SnrReport, Spectrum, Window,
};

/// Seed stream for per-qubit bias noise.
pub const QUBIT_NOISE_STREAM: u64 = 0x4e01;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityOp {
    layout: Arc<HilbertLayout>,
    matrix: Matrix,
}

impl DensityOp {
    pub fn new(layout: Arc<HilbertLayout>, matrix: Matrix) -> Result<Self> {
        if matrix.dim() != layout.dim() {
            return invalid("density matrix does not match layout");
        }
        Ok(Self { layout, matrix })
    }

    pub fn pure(state: &StateVector) -> Self {
        let a = state.amplitudes();
        Self {
            layout: Arc::clone(state.layout()),
            matrix: Matrix::from_fn(a.len(), |i, j| a[i] * a[j].conj()),
        }
    }

    pub fn maximally_mixed(layout: &Arc<HilbertLayout>) -> Self {
        let d = layout.dim();
        Self {
            layout: Arc::clone(layout),
            matrix: Matrix::identity(d).scale(C64::new(1.0 / d as f64, 0.0)),
        }
    }

    pub fn layout(&self) -> &Arc<HilbertLayout> {
        &self.layout
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix.hermitian_eigenvalues()[0]
    }

    /// Tr[ρ O]
    pub fn expectation(&self, op: &Operator) -> C64 {
        self.matrix.matmul(op.matrix()).trace()
    }

    /// Trace 1 within 1e−9, Hermitian within 1e−10, eigenvalues ≥ −1e−8.
    pub fn validate(&self) -> Result<()> {
        let tr = self.matrix.trace();
        if (tr - ONE).norm() > 1e-9 {
            return Err(Error::IntegrationFailure(format!("trace {tr} != 1")));
        }
        let herm = self.matrix.hermiticity_error();
        if herm > 1e-10 {
            return Err(Error::IntegrationFailure(format!(
                "hermiticity error {herm:.3e}"
            )));
        }
        let min = self.min_eigenvalue();
        if min < -1e-8 {
            return Err(Error::IntegrationFailure(format!(
                "negative eigenvalue {min:.3e}"
            )));
        }
        Ok(())
    }
}

fn lindbladian(rho: &Matrix, h: &Matrix, lindblads: &LindbladSet) -> Matrix {
    let mut out = h.commutator(rho).scale(-I);
    for ch in lindblads.effective() {
        let l = ch.operator.matrix();
        let ld = l.adjoint();
        let ldl = ld.matmul(l);
        out += &l.matmul(rho).matmul(&ld);
        let anti = &ldl.matmul(rho) + &rho.matmul(&ldl);
        out += &anti.scale(C64::new(-0.5, 0.0));
    }
    out
}

/// dρ/dt = −i[H, ρ] + Σ_j (L_j ρ L_j† − ½{L_j†L_j, ρ}).
pub fn lindblad_rhs(rho: &DensityOp, h: &Operator, lindblads: &LindbladSet) -> Result<Operator> {
    if **rho.layout() != **h.layout() {
        return invalid("density operator and Hamiltonian live on different layouts");
    }
    if lindblads
        .iter()
        .any(|c| **c.operator.layout() != **h.layout())
    {
        return invalid("Lindblad operator layout mismatch");
    }
    Operator::new(
        Arc::clone(&rho.layout),
        lindbladian(&rho.matrix, h.matrix(), lindblads),
    )
}

/// Classical RK4 integration of the dense master equation with a
/// time-dependent Hamiltonian. Returns the state every `stride` steps,
/// starting with the initial state.
pub fn evolve_dense(
    rho0: &DensityOp,
    hamiltonian: impl Fn(f64) -> Operator,
    lindblads: &LindbladSet,
    dt: f64,
    n_steps: usize,
    stride: usize,
) -> Result<Vec<DensityOp>> {
    if stride == 0 {
        return invalid("stride must be positive");
    }
    let rhs = |t: f64, rho: &Matrix| lindbladian(rho, hamiltonian(t).matrix(), lindblads);
    let mut rho = rho0.matrix.clone();
    let mut out = vec![rho0.clone()];
    for step in 0..n_steps {
        let t = step as f64 * dt;
        let k1 = rhs(t, &rho);
        let k2 = rhs(t + 0.5 * dt, &(&rho + &(&k1 * (0.5 * dt))));
        let k3 = rhs(t + 0.5 * dt, &(&rho + &(&k2 * (0.5 * dt))));
        let k4 = rhs(t + dt, &(&rho + &(&k3 * dt)));
        let mut incr = &k1 + &k4;
        incr += &(&(&k2 + &k3) * 2.0);
        rho += &(&incr * (dt / 6.0));
        if (step + 1) % stride == 0 {
            out.push(DensityOp::new(Arc::clone(&rho0.layout), rho.clone())?);
        }
    }
    Ok(out)
}

/// Pauli strings over `n` qubits, index k = Σ a_q 4^(n−1−q) with
/// a ∈ {0: I, 1: x, 2: y, 3: z} and qubit 0 most significant.
pub fn pauli_strings(n: usize) -> Vec<Matrix> {
    let single = [
        Matrix::identity(2),
        pauli(PauliAxis::X),
        pauli(PauliAxis::Y),
        pauli(PauliAxis::Z),
    ];
    let mut out = vec![Matrix::identity(1)];
    for _ in 0..n {
        out = out
            .iter()
            .flat_map(|m| single.iter().map(move |s| m.kron(s)))
            .collect();
    }
    out
}

/// Π_k = Tr[ρ P_k].
pub fn pauli_coefficients(rho: &Matrix, n_qubits: usize) -> Vec<f64> {
    pauli_strings(n_qubits)
        .iter()
        .map(|p| rho.matmul(p).trace().re)
        .collect()
}

/// ρ = 2^(−n) Σ_k Π_k P_k.
pub fn density_from_coefficients(coeffs: &[f64], n_qubits: usize) -> Matrix {
    let strings = pauli_strings(n_qubits);
    let mut rho = Matrix::zeros(1 << n_qubits);
    let norm = 1.0 / (1u64 << n_qubits) as f64;
    for (c, p) in coeffs.iter().zip(&strings) {
        if *c != 0.0 {
            rho += &p.scale(C64::new(c * norm, 0.0));
        }
    }
    rho
}

/// Two-qubit coefficients Π_ab, a, b ∈ {0, x, y, z}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochTensor {
    pub pi: [[f64; 4]; 4],
}

impl BlochTensor {
    pub fn from_coefficients(c: &[f64]) -> Self {
        let mut pi = [[0.0; 4]; 4];
        for (k, v) in c.iter().enumerate().take(16) {
            pi[k / 4][k % 4] = *v;
        }
        Self { pi }
    }

    pub fn coefficients(&self) -> [f64; 16] {
        let mut c = [0.0; 16];
        for k in 0..16 {
            c[k] = self.pi[k / 4][k % 4];
        }
        c
    }

    /// ⟨σ^z_1⟩ + ⟨σ^z_2⟩
    pub fn total_sz(&self) -> f64 {
        self.pi[3][0] + self.pi[0][3]
    }
}

pub fn bloch_encode(rho: &DensityOp) -> Result<BlochTensor> {
    if rho.layout.dims() != [2, 2] {
        return invalid("Bloch tensor needs a two-qubit layout");
    }
    Ok(BlochTensor::from_coefficients(&pauli_coefficients(
        &rho.matrix,
        2,
    )))
}

pub fn bloch_decode(pi: &BlochTensor) -> DensityOp {
    DensityOp {
        layout: HilbertLayout::qubits(2).expect("two-qubit layout").shared(),
        matrix: density_from_coefficients(&pi.coefficients(), 2),
    }
}

/// Sparse real generator dΠ/dt = G Π in Pauli coordinates.
#[derive(Clone, Debug, Default)]
pub struct PauliGenerator {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl PauliGenerator {
    /// G_kl = 2^(−n) Tr[P_k 𝓛(P_l)] for a linear superoperator 𝓛.
    pub fn from_superoperator(n_qubits: usize, superop: impl Fn(&Matrix) -> Matrix) -> Self {
        let strings = pauli_strings(n_qubits);
        let norm = 1.0 / (1u64 << n_qubits) as f64;
        let mut entries = Vec::new();
        for (l, pl) in strings.iter().enumerate() {
            let image = superop(pl);
            for (k, pk) in strings.iter().enumerate() {
                let v = pk.matmul(&image).trace().re * norm;
                if v.abs() > 1e-14 {
                    entries.push((k, l, v));
                }
            }
        }
        Self {
            dim: strings.len(),
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// out += c · G x
    #[inline]
    pub fn apply_add(&self, c: f64, x: &[f64], out: &mut [f64]) {
        for &(k, l, v) in &self.entries {
            out[k] += c * v * x[l];
        }
    }
}

/// Noisy chain of n ≤ 2 qubits in Pauli coordinates:
/// G(t) = G_static + Σ_j ε_j(t) G_j, where G_j is the commutator with −½σ^z_j.
#[derive(Clone, Debug)]
pub struct ChainGenerator {
    n_qubits: usize,
    static_part: PauliGenerator,
    bias: Vec<PauliGenerator>,
    drive_amp: f64,
    drive_freq: f64,
}

impl ChainGenerator {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        if params.n_qubits == 0 || params.n_qubits > 2 {
            return invalid(format!(
                "exact chain master equation supports 1 or 2 qubits, got {}",
                params.n_qubits
            ));
        }
        let n = params.n_qubits;
        let static_params = ModelParams {
            drive_amp: 0.0,
            ..params.clone()
        };
        let h0 = build_chain_hamiltonian(&static_params, 0.0, &vec![0.0; n])?;
        let lindblads = build_chain_lindblads(params)?;
        let static_part =
            PauliGenerator::from_superoperator(n, |x| lindbladian(x, h0.matrix(), &lindblads));
        let layout = params.chain_layout()?;
        let empty = LindbladSet::default();
        let mut bias = Vec::with_capacity(n);
        for j in 0..n {
            let hz = embed(&pauli(PauliAxis::Z), Subsystem::Qubit(j), &layout)?
                .scale(C64::new(-0.5, 0.0));
            bias.push(PauliGenerator::from_superoperator(n, |x| {
                lindbladian(x, hz.matrix(), &empty)
            }));
        }
        Ok(Self {
            n_qubits: n,
            static_part,
            bias,
            drive_amp: params.drive_amp,
            drive_freq: params.drive_freq,
        })
    }

    pub fn dim(&self) -> usize {
        self.static_part.dim()
    }

    fn drive(&self, t: f64) -> f64 {
        self.drive_amp * (self.drive_freq * t).sin()
    }

    fn rhs(&self, t: f64, noise: &[f64], x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.static_part.apply_add(1.0, x, out);
        let common = self.drive(t);
        for (g, n) in self.bias.iter().zip(noise) {
            g.apply_add(common + n, x, out);
        }
    }

    /// One RK4 step with the noise held constant over the step.
    pub fn step(&self, t: f64, dt: f64, noise: &[f64], x: &mut [f64], scratch: &mut Rk4Scratch) {
        let d = x.len();
        scratch.resize(d);
        let Rk4Scratch {
            k1,
            k2,
            k3,
            k4,
            tmp,
        } = scratch;
        self.rhs(t, noise, x, k1);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        self.rhs(t + 0.5 * dt, noise, tmp, k2);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        self.rhs(t + 0.5 * dt, noise, tmp, k3);
        for i in 0..d {
            tmp[i] = x[i] + dt * k3[i];
        }
        self.rhs(t + dt, noise, tmp, k4);
        for i in 0..d {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    /// Pauli coefficients of the product of each qubit's static ground state.
    pub fn ground_coefficients(&self, params: &ModelParams) -> Vec<f64> {
        let mut factors = Vec::with_capacity(self.n_qubits);
        for j in 0..self.n_qubits {
            let u = qubit_frame(params.delta.get(j), 0.0);
            factors.push(vec![u[(0, 0)], u[(1, 0)]]);
        }
        let layout = HilbertLayout::qubits(self.n_qubits)
            .expect("qubit layout")
            .shared();
        let psi = StateVector::product(&layout, &factors).expect("matching factors");
        pauli_coefficients(DensityOp::pure(&psi).matrix(), self.n_qubits)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn resize(&mut self, d: usize) {
        for v in [
            &mut self.k1,
            &mut self.k2,
            &mut self.k3,
            &mut self.k4,
            &mut self.tmp,
        ] {
            if v.len() != d {
                v.resize(d, 0.0);
            }
        }
    }
}

/// Time grid of a chain run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRun {
    pub duration: f64,
    pub dt: f64,
    /// Record every `stride` integration steps.
    pub stride: usize,
    /// Seed of this noise realization; qubit j draws from a derived stream.
    pub seed: u64,
    /// RK4 substeps per noise sample; the noise is held over all of them.
    #[serde(default = "one")]
    pub substeps: usize,
}

fn one() -> usize {
    1
}

impl ChainRun {
    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn sample_dt(&self) -> f64 {
        self.dt * self.stride as f64
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.duration >= self.dt) || self.stride == 0 || self.substeps == 0
        {
            return invalid(format!("invalid chain run grid {self:?}"));
        }
        Ok(())
    }

    fn advance(
        &self,
        gen: &ChainGenerator,
        step: usize,
        noise: &[f64],
        x: &mut [f64],
        scratch: &mut Rk4Scratch,
    ) {
        let h = self.dt / self.substeps as f64;
        let t0 = step as f64 * self.dt;
        for s in 0..self.substeps {
            gen.step(t0 + s as f64 * h, h, noise, x, scratch);
        }
    }

    fn qubit_noise(&self, params: &ModelParams, j: usize) -> WhiteNoise {
        WhiteNoise::new(
            derive_seed(self.seed, QUBIT_NOISE_STREAM, j as u64),
            params.noise_d,
            self.dt,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SzSeries {
    pub sample_dt: f64,
    pub times: Vec<f64>,
    pub sz: Vec<f64>,
}

/// ⟨σ^z⟩ series of each of `n_qubits` independent noisy qubits, sharing the
/// common drive. Qubit j's noise depends only on (run.seed, j), so the first
/// N traces of a larger run equal an N-qubit run.
pub fn uncoupled_qubit_traces(
    params: &ModelParams,
    n_qubits: usize,
    run: &ChainRun,
) -> Result<Vec<Vec<f64>>> {
    run.validate()?;
    let mut traces = Vec::with_capacity(n_qubits);
    for j in 0..n_qubits {
        let single = ModelParams {
            n_qubits: 1,
            delta: crate::model::PerQubit::Uniform(params.delta.get(j)),
            eps: crate::model::PerQubit::Uniform(params.eps.get(j)),
            g_a: crate::model::PerQubit::Uniform(params.g_a.get(j)),
            g_b: crate::model::PerQubit::Uniform(params.g_b.get(j)),
            g_qq: 0.0,
            ..params.clone()
        };
        let gen = ChainGenerator::new(&single)?;
        let mut x = gen.ground_coefficients(&single);
        let mut noise = run.qubit_noise(params, j);
        let mut scratch = Rk4Scratch::default();
        let n_steps = run.n_steps();
        let mut trace = Vec::with_capacity(n_steps / run.stride + 1);
        trace.push(x[3]);
        let mut xi = [0.0];
        for step in 0..n_steps {
            xi[0] = noise.sample();
            run.advance(&gen, step, &xi, &mut x, &mut scratch);
            if (step + 1) % run.stride == 0 {
                trace.push(x[3]);
            }
        }
        traces.push(trace);
    }
    Ok(traces)
}

fn sample_times(run: &ChainRun, len: usize) -> Vec<f64> {
    (0..len).map(|k| k as f64 * run.sample_dt()).collect()
}

/// S^z = Σ_j ⟨σ^z_j⟩ for N independent single-qubit master equations.
pub fn run_uncoupled_ensemble(
    params: &ModelParams,
    n_qubits: usize,
    run: &ChainRun,
) -> Result<SzSeries> {
    if params.g_qq != 0.0 {
        return invalid("uncoupled ensemble requires g_qq = 0");
    }
    let traces = uncoupled_qubit_traces(params, n_qubits, run)?;
    let len = traces.first().map_or(0, Vec::len);
    let sz = (0..len)
        .map(|k| traces.iter().map(|t| t[k]).sum())
        .collect();
    Ok(SzSeries {
        sample_dt: run.sample_dt(),
        times: sample_times(run, len),
        sz,
    })
}

#[derive(Clone, Debug)]
pub struct CoupledPairRecord {
    pub series: SzSeries,
    pub bloch: Vec<BlochTensor>,
    /// Smallest eigenvalue of ρ seen at the recorded samples.
    pub min_eigenvalue: f64,
}

/// Two σ^zσ^z-coupled noisy qubits, full 4×4 density matrix in Bloch-tensor
/// coordinates. Each qubit's noise stream matches `uncoupled_qubit_traces`.
pub fn run_coupled_pair(params: &ModelParams, run: &ChainRun) -> Result<CoupledPairRecord> {
    run.validate()?;
    if params.n_qubits != 2 {
        return invalid("coupled pair needs n_qubits = 2");
    }
    let gen = ChainGenerator::new(params)?;
    let mut x = gen.ground_coefficients(params);
    let mut noises: Vec<WhiteNoise> = (0..2).map(|j| run.qubit_noise(params, j)).collect();
    let mut scratch = Rk4Scratch::default();
    let n_steps = run.n_steps();
    let mut bloch = vec![BlochTensor::from_coefficients(&x)];
    let mut min_eigenvalue = f64::INFINITY;
    let mut xi = [0.0; 2];
    for step in 0..n_steps {
        for (v, n) in xi.iter_mut().zip(noises.iter_mut()) {
            *v = n.sample();
        }
        run.advance(&gen, step, &xi, &mut x, &mut scratch);
        if (step + 1) % run.stride == 0 {
            let b = BlochTensor::from_coefficients(&x);
            let lowest = bloch_decode(&b).min_eigenvalue();
            min_eigenvalue = min_eigenvalue.min(lowest);
            if lowest < -1e-6 {
                return Err(Error::IntegrationFailure(format!(
                    "density matrix lost positivity (eigenvalue {lowest:.3e}) at t = {:.3}; reduce dt",
                    (step + 1) as f64 * run.dt
                )));
            }
            bloch.push(b);
        }
    }
    let sz: Vec<f64> = bloch.iter().map(BlochTensor::total_sz).collect();
    Ok(CoupledPairRecord {
        series: SzSeries {
            sample_dt: run.sample_dt(),
            times: sample_times(run, sz.len()),
            sz,
        },
        bloch,
        min_eigenvalue,
    })
}

/// Seed stream for the noise realizations of the scaling protocols.
pub const REALIZATION_STREAM: u64 = 0x4e02;

/// Spectral protocol for the noisy-chain scaling studies. Durations are in
/// periods of the first qubit's splitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingProtocol {
    pub periods: f64,
    pub steps_per_period: usize,
    pub substeps: usize,
    pub stride: usize,
    pub realizations: usize,
    /// Uncoupled study covers N = 1..=max_qubits.
    pub max_qubits: usize,
    pub coupling_sweep: Vec<f64>,
    pub window: Window,
    pub segments: usize,
    pub signal_halfwidth: usize,
    pub baseline_band: (f64, f64),
    /// Band holding the noise-driven resonance feature.
    pub resonance_band: (f64, f64),
}

impl Default for ScalingProtocol {
    fn default() -> Self {
        Self {
            periods: 2000.0,
            steps_per_period: 200,
            substeps: 2,
            stride: 10,
            realizations: 100,
            max_qubits: 9,
            coupling_sweep: vec![0.0, 0.005, 0.01, 0.02],
            window: Window::Hann,
            segments: 8,
            signal_halfwidth: 2,
            baseline_band: (0.5, 0.75),
            resonance_band: (0.85, 1.3),
        }
    }
}

impl ScalingProtocol {
    pub fn validate(&self) -> Result<()> {
        if !(self.periods > 0.0) || self.steps_per_period == 0 || self.realizations == 0 {
            return invalid("scaling protocol needs positive periods, steps and realizations");
        }
        if self.substeps == 0 || self.stride == 0 || self.segments == 0 || self.max_qubits == 0 {
            return invalid("substeps, stride, segments and max_qubits must be positive");
        }
        for (name, (lo, hi)) in [
            ("baseline_band", self.baseline_band),
            ("resonance_band", self.resonance_band),
        ] {
            if !(lo >= 0.0 && hi > lo) {
                return invalid(format!("{name} [{lo}, {hi}] is empty"));
            }
        }
        Ok(())
    }

    pub fn run(&self, params: &ModelParams, realization: usize, master_seed: u64) -> ChainRun {
        let period = 2.0 * std::f64::consts::PI / params.qubit_splitting(0);
        let dt = period / self.steps_per_period as f64;
        ChainRun {
            duration: self.periods * period,
            dt,
            stride: self.stride,
            seed: derive_seed(master_seed, REALIZATION_STREAM, realization as u64),
            substeps: self.substeps,
        }
    }

    fn spectrum(&self, name: &str, series: &[f64], sample_dt: f64) -> Result<Spectrum> {
        psd_named(name, series, sample_dt, self.window, self.segments)
    }

    fn snr(&self, params: &ModelParams, spectrum: &Spectrum) -> Result<SnrReport> {
        snr(
            spectrum,
            params.drive_freq,
            self.signal_halfwidth,
            self.baseline_band,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n_qubits: usize,
    pub report: SnrReport,
    /// SNR(N)/SNR(1).
    pub ratio: f64,
}

#[derive(Clone, Debug)]
pub struct ScalingStudy {
    /// Realization-averaged S^z spectrum for each N.
    pub spectra: Vec<Spectrum>,
    pub points: Vec<ScalingPoint>,
}

/// SNR of the drive line in the S^z spectrum of N = 1..=max_qubits
/// independent qubits. The N-qubit sum reuses the first N qubit traces of
/// every realization, so all N share common random numbers.
pub fn uncoupled_scaling(
    params: &ModelParams,
    protocol: &ScalingProtocol,
    master_seed: u64,
) -> Result<ScalingStudy> {
    protocol.validate()?;
    let n_max = protocol.max_qubits;
    let single = ModelParams {
        n_qubits: n_max,
        g_qq: 0.0,
        ..params.clone()
    };
    let per_realization = try_map_indexed(protocol.realizations, |r| {
        let run = protocol.run(&single, r, master_seed);
        let traces = uncoupled_qubit_traces(&single, n_max, &run)?;
        let mut sum = vec![0.0; traces[0].len()];
        let mut spectra = Vec::with_capacity(n_max);
        for (n, trace) in traces.iter().enumerate() {
            sum.iter_mut().zip(trace).for_each(|(s, v)| *s += v);
            spectra.push(protocol.spectrum(&format!("sz_n{}", n + 1), &sum, run.sample_dt())?);
        }
        Ok::<_, Error>(spectra)
    })?;
    let mut spectra = Vec::with_capacity(n_max);
    let mut points: Vec<ScalingPoint> = Vec::with_capacity(n_max);
    for n in 0..n_max {
        let column: Vec<Spectrum> = per_realization.iter().map(|s| s[n].clone()).collect();
        let avg = Spectrum::average(&column)?;
        let report = protocol.snr(params, &avg)?;
        let base = points.first().map_or(report.snr, |p| p.report.snr);
        points.push(ScalingPoint {
            n_qubits: n + 1,
            ratio: report.snr / base,
            report,
        });
        spectra.push(avg);
    }
    Ok(ScalingStudy { spectra, points })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingPoint {
    pub g_qq: f64,
    pub report: SnrReport,
    /// Amplitude of the drive line above the baseline.
    pub amplitude: f64,
    /// Power-weighted mean frequency of the resonance feature.
    pub resonance_centroid: f64,
    /// Largest bin of the resonance feature.
    pub resonance_peak: f64,
    pub min_eigenvalue: f64,
}

#[derive(Clone, Debug)]
pub struct CouplingStudy {
    pub spectra: Vec<Spectrum>,
    pub points: Vec<CouplingPoint>,
}

/// Coupled-pair S^z spectra over the protocol's g_qq sweep. Every coupling
/// sees the same noise realizations.
pub fn coupling_sweep(
    params: &ModelParams,
    protocol: &ScalingProtocol,
    master_seed: u64,
) -> Result<CouplingStudy> {
    protocol.validate()?;
    if protocol.coupling_sweep.is_empty() {
        return invalid("coupling sweep is empty");
    }
    let mut spectra = Vec::new();
    let mut points = Vec::new();
    for &g in &protocol.coupling_sweep {
        let pair = ModelParams {
            n_qubits: 2,
            g_qq: g,
            ..params.clone()
        };
        let runs = try_map_indexed(protocol.realizations, |r| {
            let run = protocol.run(&pair, r, master_seed);
            let rec = run_coupled_pair(&pair, &run)?;
            let s = protocol.spectrum("sz", &rec.series.sz, run.sample_dt())?;
            Ok::<_, Error>((s, rec.min_eigenvalue))
        })?;
        let min_eigenvalue = runs.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        let column: Vec<Spectrum> = runs.into_iter().map(|r| r.0).collect();
        let mut avg = Spectrum::average(&column)?;
        avg.observable = format!("sz_g{g}");
        let report = protocol.snr(params, &avg)?;
        let band = protocol.resonance_band;
        let empty = || Error::InvalidArgument(format!("resonance band {band:?} holds no bins"));
        points.push(CouplingPoint {
            g_qq: g,
            amplitude: report.tone_amplitude(),
            resonance_centroid: spectral_centroid(&avg, band).ok_or_else(empty)?,
            resonance_peak: dominant_frequency(&avg, band, None).ok_or_else(empty)?,
            min_eigenvalue,
            report,
        });
        spectra.push(avg);
    }
    Ok(CouplingStudy { spectra, points })
}
