//! Quantum state diffusion for the detector model.
//!
//! dψ = [−iH + Σ_j(⟨L_j†⟩L_j − ½L_j†L_j − ½⟨L_j†⟩⟨L_j⟩)]ψ dt
//!      + Σ_j (L_j − ⟨L_j⟩)ψ dξ_j,   dξ_j dξ_j* = dt,
//! followed by renormalisation. The noise term is always taken in
//! Euler–Maruyama form; the drift can be integrated with the same Euler step
//! or with RK4 over the step.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{
    build_lindblads, qubit_frame, DetectorHamiltonian, Envelope, LindbladSet, ModelParams,
};
use crate::operator::{
    annihilation, embed, inner, number, pauli, HilbertLayout, Matrix, Operator, PauliAxis,
    SparseOperator, StateVector, Subsystem, C64, I, ONE, ZERO,
};
use crate::parallel::try_map_indexed;

/// Smallest pre-renormalisation norm accepted before a step is declared lost.
pub const NORM_COLLAPSE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    EulerMaruyama,
    #[default]
    Rk4Drift,
}

impl fmt::Display for Stepper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stepper::EulerMaruyama => "euler-maruyama",
            Stepper::Rk4Drift => "rk4-drift",
        })
    }
}

impl FromStr for Stepper {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler-maruyama" | "em" => Ok(Stepper::EulerMaruyama),
            "rk4-drift" | "rk4" => Ok(Stepper::Rk4Drift),
            other => invalid(format!("unknown stepper `{other}`")),
        }
    }
}

/// Complex Wiener increment with independent real and imaginary parts of
/// variance dt/2.
pub fn wiener_increment<R: Rng + ?Sized>(rng: &mut R, dt: f64) -> C64 {
    let s = (0.5 * dt).sqrt();
    let u: f64 = rng.sample(StandardNormal);
    let v: f64 = rng.sample(StandardNormal);
    C64::new(u * s, v * s)
}

/// Sparse QSD generator: H(t) = H₀ + f(t)X_a + h(t)X_b plus channels.
/// The channel terms ½L†L are folded into H_eff = H₀ − (i/2)Σ L†L.
#[derive(Clone, Debug)]
pub struct QsdSystem {
    layout: Arc<HilbertLayout>,
    h_eff: SparseOperator,
    drives: Vec<(Envelope, SparseOperator)>,
    channels: Vec<SparseOperator>,
}

impl QsdSystem {
    pub fn new(h: &Operator, lindblads: &LindbladSet) -> Result<Self> {
        let layout = Arc::clone(h.layout());
        let mut channels = Vec::new();
        let mut h_eff = h.clone();
        for ch in lindblads.effective() {
            if ch.operator.dim() != layout.dim() {
                return invalid(format!(
                    "channel `{}` has dimension {}, Hamiltonian {}",
                    ch.label,
                    ch.operator.dim(),
                    layout.dim()
                ));
            }
            h_eff.add_scaled(
                C64::new(0.0, -0.5),
                &ch.operator.adjoint().product(&ch.operator),
            );
            channels.push(ch.operator.to_sparse());
        }
        Ok(Self {
            h_eff: h_eff.to_sparse(),
            layout,
            drives: Vec::new(),
            channels,
        })
    }

    pub fn detector(params: &ModelParams) -> Result<Self> {
        let h = DetectorHamiltonian::new(params)?;
        let mut sys = Self::new(&h.static_part, &build_lindblads(params)?)?;
        for (env, op) in [(&h.f, &h.input_quadrature), (&h.h, &h.readout_quadrature)] {
            if !env.is_zero() {
                sys.drives.push((env.clone(), op.to_sparse()));
            }
        }
        Ok(sys)
    }

    pub fn layout(&self) -> &Arc<HilbertLayout> {
        &self.layout
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    fn hamiltonian_into(&self, t: f64, x: &[C64], out: &mut [C64]) {
        self.h_eff.apply_into(x, out);
        for (env, op) in &self.drives {
            let v = env.at(t);
            if v != 0.0 {
                op.apply_add_into(C64::new(v, 0.0), x, out);
            }
        }
    }

    /// out = drift(t, x) = −iH_eff x + Σ⟨L⟩*Lx − ½Σ|⟨L⟩|²x, with
    /// expectations normalised by ⟨x|x⟩.
    fn drift(&self, t: f64, x: &[C64], out: &mut [C64], ws: &mut Workspace) {
        self.hamiltonian_into(t, x, out);
        out.iter_mut().for_each(|o| *o *= -I);
        let nrm = inner(x, x).re;
        let mut c = 0.0;
        for l in &self.channels {
            let lx = &mut ws.lx;
            l.apply_into(x, lx);
            let mean = inner(x, lx) / nrm;
            c -= 0.5 * mean.norm_sqr();
            let m = mean.conj();
            for (o, v) in out.iter_mut().zip(lx.iter()) {
                *o += m * v;
            }
        }
        for (o, v) in out.iter_mut().zip(x) {
            *o += c * v;
        }
    }

    /// Advances a normalised state by one step and renormalises it.
    /// Returns the norm before renormalisation.
    pub fn step<R: Rng + ?Sized>(
        &self,
        psi: &mut [C64],
        t: f64,
        dt: f64,
        stepper: Stepper,
        rng: &mut R,
        ws: &mut Workspace,
    ) -> Result<f64> {
        let d = psi.len();
        ws.resize(d);
        // Noise term at the start of the step.
        ws.noise.iter_mut().for_each(|v| *v = ZERO);
        for l in &self.channels {
            let dxi = wiener_increment(rng, dt);
            l.apply_into(psi, &mut ws.lx);
            let mean = inner(psi, &ws.lx);
            for k in 0..d {
                ws.noise[k] += (ws.lx[k] - mean * psi[k]) * dxi;
            }
        }
        match stepper {
            Stepper::EulerMaruyama => {
                let mut k1 = std::mem::take(&mut ws.k1);
                self.drift(t, psi, &mut k1, ws);
                for i in 0..d {
                    psi[i] += k1[i] * dt + ws.noise[i];
                }
                ws.k1 = k1;
            }
            Stepper::Rk4Drift => {
                let mut k = [
                    std::mem::take(&mut ws.k1),
                    std::mem::take(&mut ws.k2),
                    std::mem::take(&mut ws.k3),
                    std::mem::take(&mut ws.k4),
                ];
                let mut tmp = std::mem::take(&mut ws.tmp);
                self.drift(t, psi, &mut k[0], ws);
                for i in 0..d {
                    tmp[i] = psi[i] + k[0][i] * (0.5 * dt);
                }
                self.drift(t + 0.5 * dt, &tmp, &mut k[1], ws);
                for i in 0..d {
                    tmp[i] = psi[i] + k[1][i] * (0.5 * dt);
                }
                self.drift(t + 0.5 * dt, &tmp, &mut k[2], ws);
                for i in 0..d {
                    tmp[i] = psi[i] + k[2][i] * dt;
                }
                self.drift(t + dt, &tmp, &mut k[3], ws);
                for i in 0..d {
                    psi[i] += (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]) * (dt / 6.0)
                        + ws.noise[i];
                }
                let [k1, k2, k3, k4] = k;
                ws.k1 = k1;
                ws.k2 = k2;
                ws.k3 = k3;
                ws.k4 = k4;
                ws.tmp = tmp;
            }
        }
        let n = inner(psi, psi).re.sqrt();
        if !(n >= NORM_COLLAPSE) {
            return Err(Error::IntegrationFailure(format!(
                "state norm collapsed to {n:.3e} at t = {t:.4}"
            )));
        }
        psi.iter_mut().for_each(|v| *v /= n);
        Ok(n)
    }
}

/// Scratch buffers reused across steps.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
    lx: Vec<C64>,
    noise: Vec<C64>,
}

impl Workspace {
    fn resize(&mut self, d: usize) {
        for v in [
            &mut self.k1,
            &mut self.k2,
            &mut self.k3,
            &mut self.k4,
            &mut self.tmp,
            &mut self.lx,
            &mut self.noise,
        ] {
            if v.len() != d {
                v.resize(d, ZERO);
            }
        }
    }
}

/// One literal Euler–Maruyama step with explicit renormalisation.
pub fn qsd_step<R: Rng + ?Sized>(
    state: &StateVector,
    h: &Operator,
    lindblads: &LindbladSet,
    dt: f64,
    rng: &mut R,
) -> Result<StateVector> {
    if (state.norm() - 1.0).abs() > 1e-9 {
        return invalid("qsd_step needs a normalised state");
    }
    let sys = QsdSystem::new(h, lindblads)?;
    let mut amps = state.amplitudes().to_vec();
    sys.step(
        &mut amps,
        0.0,
        dt,
        Stepper::EulerMaruyama,
        rng,
        &mut Workspace::default(),
    )?;
    StateVector::new(Arc::clone(state.layout()), amps)
}

#[derive(Clone, Debug)]
pub struct Observable {
    pub name: String,
    pub op: SparseOperator,
}

impl Observable {
    pub fn new(name: impl Into<String>, op: &Operator) -> Self {
        Self {
            name: name.into(),
            op: op.to_sparse(),
        }
    }
}

/// Populations of the top Fock level of each bosonic mode.
#[derive(Clone, Debug)]
pub struct LeakageMonitor {
    top_levels: Vec<(Subsystem, Vec<usize>)>,
}

impl LeakageMonitor {
    pub fn new(layout: &HilbertLayout) -> Self {
        let mut top_levels = Vec::new();
        for (pos, label) in layout.labels().iter().enumerate() {
            if matches!(label, Subsystem::InputMode | Subsystem::ReadoutMode) {
                let top = layout.dims()[pos] - 1;
                let idx = (0..layout.dim())
                    .filter(|&i| layout.digit(i, pos) == top)
                    .collect();
                top_levels.push((*label, idx));
            }
        }
        Self { top_levels }
    }

    /// Largest top-level population over the monitored modes.
    pub fn worst(&self, psi: &[C64]) -> f64 {
        self.top_levels
            .iter()
            .map(|(_, idx)| idx.iter().map(|&i| psi[i].norm_sqr()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
    pub stride: usize,
}

impl TimeGrid {
    pub fn n_samples(&self) -> usize {
        self.n_steps / self.stride + 1
    }

    pub fn sample_dt(&self) -> f64 {
        self.dt * self.stride as f64
    }
}

/// Statistics of ‖ψ‖ − 1 before renormalisation, over all steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub steps: usize,
    pub mean: f64,
    pub rms: f64,
    pub max_abs: f64,
}

#[derive(Clone, Debug)]
pub struct Propagation {
    pub times: Vec<f64>,
    /// One series per observable, in the order given.
    pub values: Vec<Vec<f64>>,
    /// |‖ψ‖ − 1| after renormalisation at each sample.
    pub norm_drift: Vec<f64>,
    pub pre_norm: NormStats,
    pub max_leakage: f64,
    pub final_state: StateVector,
}

/// Integrates one trajectory from `psi0`, sampling every `grid.stride` steps.
pub fn propagate(
    system: &QsdSystem,
    psi0: &StateVector,
    grid: &TimeGrid,
    observables: &[Observable],
    leakage: Option<&LeakageMonitor>,
    stepper: Stepper,
    seed: u64,
) -> Result<Propagation> {
    if grid.stride == 0 || !(grid.dt > 0.0) {
        return invalid(format!("invalid time grid {grid:?}"));
    }
    if psi0.layout().dim() != system.layout.dim() {
        return invalid("initial state does not match the system dimension");
    }
    let mut psi = psi0.amplitudes().to_vec();
    let n0 = inner(&psi, &psi).re.sqrt();
    psi.iter_mut().for_each(|v| *v /= n0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = Workspace::default();
    let n_samples = grid.n_samples();
    let mut times = Vec::with_capacity(n_samples);
    let mut values = vec![Vec::with_capacity(n_samples); observables.len()];
    let mut norm_drift = Vec::with_capacity(n_samples);
    let mut max_leakage: f64 = 0.0;
    let mut record = |t: f64, psi: &[C64], values: &mut Vec<Vec<f64>>| {
        times.push(t);
        for (series, obs) in values.iter_mut().zip(observables) {
            series.push(obs.op.expectation(psi).re);
        }
        norm_drift.push((inner(psi, psi).re.sqrt() - 1.0).abs());
        if let Some(m) = leakage {
            max_leakage = max_leakage.max(m.worst(psi));
        }
    };
    record(0.0, &psi, &mut values);
    let (mut sum, mut sum_sq, mut worst) = (0.0, 0.0, 0.0f64);
    for step in 0..grid.n_steps {
        let t = step as f64 * grid.dt;
        let n = system.step(&mut psi, t, grid.dt, stepper, &mut rng, &mut ws)?;
        let e = n - 1.0;
        sum += e;
        sum_sq += e * e;
        worst = worst.max(e.abs());
        if (step + 1) % grid.stride == 0 {
            record((step + 1) as f64 * grid.dt, &psi, &mut values);
        }
    }
    let steps = grid.n_steps.max(1) as f64;
    Ok(Propagation {
        times,
        values,
        norm_drift,
        pre_norm: NormStats {
            steps: grid.n_steps,
            mean: sum / steps,
            rms: (sum_sq / steps).sqrt(),
            max_abs: worst,
        },
        max_leakage,
        final_state: StateVector::new(Arc::clone(psi0.layout()), psi)?,
    })
}

/// State of the input mode at t = 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InputState {
    Fock {
        n: usize,
    },
    /// Coherent state |α⟩ with α = re + i·im.
    Coherent {
        re: f64,
        im: f64,
    },
    /// Coherent state with real α = √mean.
    Photons {
        mean: f64,
    },
}

impl Default for InputState {
    fn default() -> Self {
        InputState::Photons { mean: 0.0 }
    }
}

impl InputState {
    pub fn mean_photons(&self) -> f64 {
        match *self {
            InputState::Fock { n } => n as f64,
            InputState::Coherent { re, im } => re * re + im * im,
            InputState::Photons { mean } => mean,
        }
    }

    /// Fock amplitudes truncated to `levels` (coherent states by displacing
    /// the truncated vacuum, then renormalised).
    pub fn amplitudes(&self, levels: usize) -> Result<Vec<C64>> {
        let alpha = match *self {
            InputState::Fock { n } => {
                if n >= levels {
                    return invalid(format!("Fock state {n} needs more than {levels} levels"));
                }
                let mut v = vec![ZERO; levels];
                v[n] = ONE;
                return Ok(v);
            }
            InputState::Coherent { re, im } => C64::new(re, im),
            InputState::Photons { mean } => {
                if !(mean >= 0.0) {
                    return invalid("mean photon number must be non-negative");
                }
                C64::new(mean.sqrt(), 0.0)
            }
        };
        let mut vac = vec![ZERO; levels];
        vac[0] = ONE;
        let mut v = displacement(levels, alpha)?.apply(&vac);
        let n = inner(&v, &v).re.sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        Ok(v)
    }
}

/// D(α) = exp(αa† − α*a) on `levels` Fock states.
pub fn displacement(levels: usize, alpha: C64) -> Result<Matrix> {
    let a = annihilation(levels)?;
    let gen = &a.adjoint().scale(alpha) - &a.scale(alpha.conj());
    Ok(gen.expm())
}

/// Initial state of every qubit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QubitInit {
    /// (|0⟩ + |1⟩)/√2 in the σ^z basis.
    #[default]
    Superposition,
    /// σ^z = +1.
    Up,
    /// σ^z = −1.
    Down,
    /// Ground state of the qubit's static Hamiltonian.
    Ground,
    Excited,
}

impl QubitInit {
    pub fn amplitudes(self, delta: f64, eps: f64) -> Vec<C64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            QubitInit::Superposition => vec![C64::new(s, 0.0), C64::new(s, 0.0)],
            QubitInit::Up => vec![ONE, ZERO],
            QubitInit::Down => vec![ZERO, ONE],
            QubitInit::Ground | QubitInit::Excited => {
                let u = qubit_frame(delta, eps);
                let col = usize::from(self == QubitInit::Excited);
                vec![u[(0, col)], u[(1, col)]]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: ModelParams,
    pub input: InputState,
    pub qubit_init: QubitInit,
    /// Duration in periods 2π of the reference qubit splitting ε = 1.
    pub periods: f64,
    pub steps_per_period: usize,
    pub stride: usize,
    pub seed: u64,
    /// Periods excluded from spectral analysis.
    pub warmup_periods: f64,
    pub stepper: Stepper,
    pub leakage_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: ModelParams::default(),
            input: InputState::default(),
            qubit_init: QubitInit::default(),
            periods: 600.0,
            steps_per_period: 200,
            stride: 10,
            seed: 0,
            warmup_periods: 300.0,
            stepper: Stepper::default(),
            leakage_threshold: 1e-4,
        }
    }
}

impl RunConfig {
    pub fn dt(&self) -> f64 {
        2.0 * PI / self.steps_per_period as f64
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            dt: self.dt(),
            n_steps: (self.periods * self.steps_per_period as f64).round() as usize,
            stride: self.stride,
        }
    }

    /// Largest angular frequency in the detector model.
    pub fn max_frequency(&self) -> f64 {
        let p = &self.params;
        (0..p.n_qubits)
            .map(|j| p.qubit_splitting(j))
            .chain([p.omega_a, p.omega_b])
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.steps_per_period == 0 || self.stride == 0 {
            return invalid("steps_per_period and stride must be positive");
        }
        if !(self.periods > 0.0) || !(self.warmup_periods >= 0.0) {
            return invalid("periods must be positive and warmup non-negative");
        }
        if self.periods < self.warmup_periods {
            return invalid(format!(
                "duration {} periods is shorter than warmup {}",
                self.periods, self.warmup_periods
            ));
        }
        let limit = 2.0 * PI / (50.0 * self.max_frequency());
        if self.dt() > limit {
            return invalid(format!(
                "dt = {:.4e} exceeds 1/50 of the fastest period ({limit:.4e})",
                self.dt()
            ));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Result<StateVector> {
        let p = &self.params;
        let layout = p.full_layout()?;
        let mut factors: Vec<Vec<C64>> = (0..p.n_qubits)
            .map(|j| self.qubit_init.amplitudes(p.delta.get(j), p.eps.get(j)))
            .collect();
        factors.push(self.input.amplitudes(p.m_a)?);
        let mut vac = vec![ZERO; p.m_b];
        vac[0] = ONE;
        factors.push(vac);
        StateVector::product(&layout, &factors)
    }
}

/// Named observables recorded for the detector model.
pub fn detector_observables(params: &ModelParams) -> Result<Vec<Observable>> {
    let layout = params.full_layout()?;
    let b = annihilation(params.m_b)?;
    let bd = b.adjoint();
    let wb = params.omega_b;
    let xb = (&b + &bd).scale(C64::new((0.5 / wb).sqrt(), 0.0));
    let pb = (&bd - &b).scale(I * (0.5 * wb).sqrt());
    let mut obs = vec![
        Observable::new("x_b", &embed(&xb, Subsystem::ReadoutMode, &layout)?),
        Observable::new("p_b", &embed(&pb, Subsystem::ReadoutMode, &layout)?),
    ];
    let mut total = Operator::zeros(&layout);
    for j in 0..params.n_qubits {
        let sz = embed(&pauli(PauliAxis::Z), Subsystem::Qubit(j), &layout)?;
        total.add_scaled(ONE, &sz);
        obs.push(Observable::new(format!("sigma_z_{j}"), &sz));
    }
    obs.push(Observable::new("s_z", &total));
    obs.push(Observable::new(
        "n_a",
        &embed(&number(params.m_a)?, Subsystem::InputMode, &layout)?,
    ));
    obs.push(Observable::new(
        "n_b",
        &embed(&number(params.m_b)?, Subsystem::ReadoutMode, &layout)?,
    ));
    Ok(obs)
}

pub const NORM_DRIFT: &str = "norm_drift";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub dt: f64,
    pub stride: usize,
    pub times: Vec<f64>,
    pub series: Vec<Series>,
    /// First sample inside the analysis window.
    pub analysis_start: usize,
    pub pre_norm: NormStats,
    pub max_leakage: f64,
    pub leakage_flagged: bool,
}

impl TrajectoryRecord {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.series.iter().map(|s| s.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.series
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.values.as_slice())
    }

    pub fn in_analysis(&self, sample: usize) -> bool {
        sample >= self.analysis_start
    }

    /// Samples of `name` inside the analysis window.
    pub fn analysis_window(&self, name: &str) -> Option<&[f64]> {
        self.get(name)
            .map(|v| &v[self.analysis_start.min(v.len())..])
    }

    pub fn sample_dt(&self) -> f64 {
        self.dt * self.stride as f64
    }

    /// One row per sample: time, analysis flag, then every series.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["time".to_string(), "in_analysis".to_string()];
        header.extend(self.series.iter().map(|s| s.name.clone()));
        out.write_record(&header).map_err(csv_err)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t}"), u8::from(self.in_analysis(k)).to_string()];
            row.extend(self.series.iter().map(|s| format!("{:e}", s.values[k])));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Compact dump: magic, header length, JSON header, then little-endian
    /// f64 columns (times first, then each series).
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let header = BinaryHeader::of(self);
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::Config(format!("encoding dump header: {e}")))?;
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for v in self
            .times
            .iter()
            .chain(self.series.iter().flat_map(|s| s.values.iter()))
        {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Config("not a trajectory dump".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let h: BinaryHeader = serde_json::from_slice(&json)
            .map_err(|e| Error::Config(format!("decoding dump header: {e}")))?;
        let mut column = |n: usize| -> Result<Vec<f64>> {
            let mut buf = [0u8; 8];
            (0..n)
                .map(|_| {
                    r.read_exact(&mut buf)?;
                    Ok(f64::from_le_bytes(buf))
                })
                .collect()
        };
        let times = column(h.samples)?;
        let mut series = Vec::with_capacity(h.names.len());
        for name in h.names {
            series.push(Series {
                name,
                values: column(h.samples)?,
            });
        }
        Ok(Self {
            seed: h.seed,
            dt: h.dt,
            stride: h.stride,
            times,
            series,
            analysis_start: h.analysis_start,
            pre_norm: h.pre_norm,
            max_leakage: h.max_leakage,
            leakage_flagged: h.leakage_flagged,
        })
    }
}

const BINARY_MAGIC: &[u8; 8] = b"QMMTRJ01";

#[derive(Serialize, Deserialize)]
struct BinaryHeader {
    seed: u64,
    dt: f64,
    stride: usize,
    samples: usize,
    names: Vec<String>,
    analysis_start: usize,
    pre_norm: NormStats,
    max_leakage: f64,
    leakage_flagged: bool,
}

impl BinaryHeader {
    fn of(r: &TrajectoryRecord) -> Self {
        Self {
            seed: r.seed,
            dt: r.dt,
            stride: r.stride,
            samples: r.times.len(),
            names: r.series.iter().map(|s| s.name.clone()).collect(),
            analysis_start: r.analysis_start,
            pre_norm: r.pre_norm,
            max_leakage: r.max_leakage,
            leakage_flagged: r.leakage_flagged,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("writing csv: {e}"))
}

/// Runs one detector trajectory. Leakage above the configured threshold is
/// flagged on the record rather than treated as an error.
pub fn run_trajectory(config: &RunConfig) -> Result<TrajectoryRecord> {
    config.validate()?;
    let system = QsdSystem::detector(&config.params)?;
    let observables = detector_observables(&config.params)?;
    let monitor = LeakageMonitor::new(system.layout());
    let grid = config.grid();
    let prop = propagate(
        &system,
        &config.initial_state()?,
        &grid,
        &observables,
        Some(&monitor),
        config.stepper,
        config.seed,
    )?;
    let warmup = config.warmup_periods * 2.0 * PI;
    let analysis_start = prop
        .times
        .iter()
        .position(|&t| t >= warmup - 1e-9 * grid.dt)
        .unwrap_or(prop.times.len());
    let mut series: Vec<Series> = observables
        .iter()
        .zip(prop.values)
        .map(|(o, values)| Series {
            name: o.name.clone(),
            values,
        })
        .collect();
    series.push(Series {
        name: NORM_DRIFT.into(),
        values: prop.norm_drift,
    });
    if prop.max_leakage > config.leakage_threshold {
        log::warn!(
            "trajectory seed {} leaked {:.3e} into the top boson level",
            config.seed,
            prop.max_leakage
        );
    }
    Ok(TrajectoryRecord {
        seed: config.seed,
        dt: grid.dt,
        stride: grid.stride,
        times: prop.times,
        series,
        analysis_start,
        pre_norm: prop.pre_norm,
        max_leakage: prop.max_leakage,
        leakage_flagged: prop.max_leakage > config.leakage_threshold,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSeries {
    pub name: String,
    pub mean: Vec<f64>,
    /// Standard error of the mean; zero for a single trajectory.
    pub stderr: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_traj: usize,
    pub times: Vec<f64>,
    pub series: Vec<EnsembleSeries>,
}

impl EnsembleSummary {
    pub fn from_records(records: &[TrajectoryRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty ensemble".into()))?;
        let n = records.len() as f64;
        let mut series = Vec::with_capacity(first.series.len());
        for (idx, s) in first.series.iter().enumerate() {
            let len = s.values.len();
            let mut mean = vec![0.0; len];
            let mut sq = vec![0.0; len];
            for r in records {
                let v = &r.series[idx].values;
                if v.len() != len {
                    return invalid("ensemble records have different lengths");
                }
                for k in 0..len {
                    mean[k] += v[k];
                    sq[k] += v[k] * v[k];
                }
            }
            let stderr = (0..len)
                .map(|k| {
                    mean[k] /= n;
                    if records.len() < 2 {
                        0.0
                    } else {
                        let var = (sq[k] / n - mean[k] * mean[k]).max(0.0) * n / (n - 1.0);
                        (var / n).sqrt()
                    }
                })
                .collect();
            series.push(EnsembleSeries {
                name: s.name.clone(),
                mean,
                stderr,
            });
        }
        Ok(Self {
            n_traj: records.len(),
            times: first.times.clone(),
            series,
        })
    }

    pub fn get(&self, name: &str) -> Option<&EnsembleSeries> {
        self.series.iter().find(|s| s.name == name)
    }
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    pub records: Vec<TrajectoryRecord>,
    pub summary: EnsembleSummary,
}

/// Trajectory i runs with seed `config.seed + i`.
pub fn run_ensemble(config: &RunConfig, n_traj: usize) -> Result<Ensemble> {
    if n_traj == 0 {
        return invalid("n_traj must be at least 1");
    }
    config.validate()?;
    let records = try_map_indexed(n_traj, |i| {
        let cfg = RunConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..config.clone()
        };
        run_trajectory(&cfg)
    })?;
    let summary = EnsembleSummary::from_records(&records)?;
    Ok(Ensemble { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LindbladChannel;
    use crate::operator::HilbertLayout;

    fn qubit_layout() -> Arc<HilbertLayout> {
        HilbertLayout::qubits(1).unwrap().shared()
    }

    fn small_params() -> ModelParams {
        ModelParams {
            m_a: 3,
            m_b: 3,
            ..ModelParams::default()
        }
    }

    #[test]
    fn wiener_increment_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dt = 0.01;
        let n = 1_000_000;
        let (mut m2, mut sq) = (0.0, ZERO);
        for _ in 0..n {
            let x = wiener_increment(&mut rng, dt);
            m2 += x.norm_sqr();
            sq += x * x;
        }
        assert!((m2 / n as f64 / dt - 1.0).abs() < 0.01);
        assert!((sq / n as f64).norm() / dt < 0.01);
    }

    #[test]
    fn no_channels_gives_normalised_euler_step() {
        let layout = qubit_layout();
        let h = Operator::new(
            Arc::clone(&layout),
            pauli(PauliAxis::X).scale(C64::new(0.5, 0.0)),
        )
        .unwrap();
        let psi = StateVector::new(Arc::clone(&layout), vec![ONE, ZERO]).unwrap();
        let dt = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = qsd_step(&psi, &h, &LindbladSet::default(), dt, &mut rng).unwrap();
        let hp = h.matrix().apply(psi.amplitudes());
        let mut expect: Vec<C64> = psi
            .amplitudes()
            .iter()
            .zip(&hp)
            .map(|(p, q)| p - I * q * dt)
            .collect();
        let n = inner(&expect, &expect).re.sqrt();
        expect.iter_mut().for_each(|v| *v /= n);
        for (a, b) in next.amplitudes().iter().zip(&expect) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn euler_energy_change_is_second_order() {
        let p = small_params();
        let h = DetectorHamiltonian::new(&p).unwrap().static_part;
        let cfg = RunConfig {
            params: p,
            qubit_init: QubitInit::Superposition,
            input: InputState::Photons { mean: 1.0 },
            ..RunConfig::default()
        };
        let psi = cfg.initial_state().unwrap();
        let e0 = expect_re(&psi, &h);
        let mut changes = Vec::new();
        for dt in [1e-2, 5e-3] {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let next = qsd_step(&psi, &h, &LindbladSet::default(), dt, &mut rng).unwrap();
            changes.push((expect_re(&next, &h) - e0).abs());
        }
        let slope = (changes[0] / changes[1]).log2();
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    fn expect_re(psi: &StateVector, op: &Operator) -> f64 {
        crate::operator::expectation(psi, op).unwrap().re
    }

    #[test]
    fn zero_dissipation_tracks_exact_propagator() {
        let p = ModelParams {
            gamma_z: 0.0,
            gamma_xy: 0.0,
            gamma_b: 0.0,
            ..small_params()
        };
        let cfg = RunConfig {
            params: p.clone(),
            input: InputState::Fock { n: 1 },
            ..RunConfig::default()
        };
        let psi0 = cfg.initial_state().unwrap();
        let sys = QsdSystem::detector(&p).unwrap();
        assert_eq!(sys.n_channels(), 0);
        let grid = TimeGrid {
            dt: cfg.dt(),
            n_steps: 200 * 5,
            stride: 1000,
        };
        let prop = propagate(&sys, &psi0, &grid, &[], None, Stepper::Rk4Drift, 3).unwrap();
        let h = DetectorHamiltonian::new(&p).unwrap().static_part;
        let u = h
            .matrix()
            .scale(-I * (grid.n_steps as f64 * grid.dt))
            .expm();
        let exact =
            StateVector::new(Arc::clone(psi0.layout()), u.apply(psi0.amplitudes())).unwrap();
        assert!(1.0 - prop.final_state.fidelity(&exact) < 1e-9);
    }

    #[test]
    fn amplitude_damping_mean_matches_exponential() {
        let layout = qubit_layout();
        let gamma: f64 = 0.05;
        // |g⟩⟨e| with e = σ^z = −1 at Δ = 0, ε = 1.
        let lower = pauli(PauliAxis::Raising).scale(C64::new((2.0 * gamma).sqrt(), 0.0));
        let set = LindbladSet {
            channels: vec![LindbladChannel {
                label: "relax".into(),
                operator: Operator::new(Arc::clone(&layout), lower).unwrap(),
                rate: gamma,
            }],
        };
        let h = Operator::new(
            Arc::clone(&layout),
            pauli(PauliAxis::Z).scale(C64::new(-0.5, 0.0)),
        )
        .unwrap();
        let sys = QsdSystem::new(&h, &set).unwrap();
        let excited = StateVector::new(Arc::clone(&layout), vec![ZERO, ONE]).unwrap();
        let pop = Observable::new(
            "p_e",
            &Operator::new(Arc::clone(&layout), Matrix::diagonal(&[ZERO, ONE])).unwrap(),
        );
        let grid = TimeGrid {
            dt: 0.02,
            n_steps: 500,
            stride: 100,
        };
        let n = 400;
        let runs: Vec<Vec<f64>> = (0..n)
            .map(|s| {
                propagate(
                    &sys,
                    &excited,
                    &grid,
                    std::slice::from_ref(&pop),
                    None,
                    Stepper::Rk4Drift,
                    s,
                )
                .unwrap()
                .values
                .remove(0)
            })
            .collect();
        for k in 1..grid.n_samples() {
            let t = k as f64 * grid.sample_dt();
            let vals: Vec<f64> = runs.iter().map(|r| r[k]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let expect = (-2.0 * gamma * t).exp();
            assert!(
                (mean - expect).abs() < 4.0 * se + 1e-3,
                "t={t} {mean} vs {expect} ± {se}"
            );
        }
    }

    #[test]
    fn ground_state_fixed_point() {
        let p = ModelParams {
            g_a: crate::model::PerQubit::Uniform(0.0),
            g_b: crate::model::PerQubit::Uniform(0.0),
            ..small_params()
        };
        let cfg = RunConfig {
            params: p,
            qubit_init: QubitInit::Ground,
            input: InputState::Fock { n: 0 },
            periods: 2.0,
            warmup_periods: 1.0,
            ..RunConfig::default()
        };
        let rec = run_trajectory(&cfg).unwrap();
        for s in &rec.series {
            let first = s.values[0];
            assert!(
                s.values.iter().all(|v| (v - first).abs() < 1e-12),
                "{} not constant",
                s.name
            );
        }
        assert!(rec.in_analysis(rec.times.len() - 1));
        assert!(!rec.in_analysis(0));
        assert!((rec.times[rec.analysis_start] - 2.0 * PI).abs() < 1e-9);
    }

    #[test]
    fn records_are_deterministic_and_share_grid() {
        let cfg = RunConfig {
            params: small_params(),
            input: InputState::Photons { mean: 0.5 },
            periods: 3.0,
            warmup_periods: 1.0,
            seed: 42,
            ..RunConfig::default()
        };
        let a = run_trajectory(&cfg).unwrap();
        let b = run_trajectory(&cfg).unwrap();
        assert_eq!(a, b);
        let names: Vec<&str> = a.names().collect();
        assert_eq!(
            names,
            [
                "x_b",
                "p_b",
                "sigma_z_0",
                "sigma_z_1",
                "s_z",
                "n_a",
                "n_b",
                NORM_DRIFT
            ]
        );
        assert!(a.series.iter().all(|s| s.values.len() == a.times.len()));
        assert!(a.get(NORM_DRIFT).unwrap().iter().all(|&d| d < 1e-9));
        let c = run_trajectory(&RunConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.get("x_b"), c.get("x_b"));
    }

    #[test]
    fn binary_dump_round_trips() {
        let cfg = RunConfig {
            params: small_params(),
            periods: 1.0,
            warmup_periods: 0.5,
            seed: 9,
            ..RunConfig::default()
        };
        let rec = run_trajectory(&cfg).unwrap();
        let mut buf = Vec::new();
        rec.write_binary(&mut buf).unwrap();
        assert_eq!(TrajectoryRecord::read_binary(buf.as_slice()).unwrap(), rec);
        assert!(TrajectoryRecord::read_binary(&b"garbage!........"[..]).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let cfg = RunConfig {
            params: small_params(),
            periods: 1.0,
            warmup_periods: 0.5,
            ..RunConfig::default()
        };
        let rec = run_trajectory(&cfg).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "time,in_analysis,x_b,p_b,sigma_z_0,sigma_z_1,s_z,n_a,n_b,norm_drift"
        );
        assert_eq!(lines.count(), rec.times.len());
    }

    #[test]
    fn ensemble_of_one_equals_record() {
        let cfg = RunConfig {
            params: small_params(),
            periods: 1.0,
            warmup_periods: 0.0,
            seed: 5,
            ..RunConfig::default()
        };
        let ens = run_ensemble(&cfg, 1).unwrap();
        let rec = run_trajectory(&cfg).unwrap();
        assert_eq!(ens.records[0], rec);
        for s in &ens.summary.series {
            assert_eq!(s.mean.as_slice(), rec.get(&s.name).unwrap());
            assert!(s.stderr.iter().all(|&e| e == 0.0));
        }
        assert!(run_ensemble(&cfg, 0).is_err());
    }

    #[test]
    fn ensemble_seeds_are_consecutive() {
        let cfg = RunConfig {
            params: small_params(),
            periods: 0.5,
            warmup_periods: 0.0,
            seed: 100,
            ..RunConfig::default()
        };
        let ens = run_ensemble(&cfg, 3).unwrap();
        let seeds: Vec<u64> = ens.records.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, [100, 101, 102]);
    }

    #[test]
    fn config_validation() {
        let cfg = RunConfig {
            periods: 10.0,
            warmup_periods: 20.0,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let coarse = RunConfig {
            steps_per_period: 20,
            ..RunConfig::default()
        };
        assert!(coarse.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn coherent_input_has_requested_photons() {
        let v = InputState::Photons { mean: 1.0 }.amplitudes(12).unwrap();
        let n: f64 = v
            .iter()
            .enumerate()
            .map(|(k, a)| k as f64 * a.norm_sqr())
            .sum();
        assert!((n - 1.0).abs() < 1e-6);
        assert!(InputState::Fock { n: 4 }.amplitudes(3).is_err());
    }

    #[test]
    fn leakage_is_flagged() {
        let cfg = RunConfig {
            params: ModelParams {
                m_a: 4,
                ..small_params()
            },
            input: InputState::Photons { mean: 2.0 },
            periods: 0.5,
            warmup_periods: 0.0,
            ..RunConfig::default()
        };
        let rec = run_trajectory(&cfg).unwrap();
        assert!(rec.leakage_flagged);
        assert!(rec.max_leakage > 1e-4);
    }
}
