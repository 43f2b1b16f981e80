//! Detector and scaling-chain Hamiltonians, Lindblad channels and noise.
//!
//! Units: ħ = 1 and the reference qubit splitting ε ≡ 1, so every frequency
//! and rate is a dimensionless multiple of ε and times are in units of 1/ε.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::operator::{
    annihilation, embed, embed_product, pauli, HilbertLayout, Matrix, Operator, PauliAxis,
    Subsystem, C64,
};

/// Per-qubit parameter: one value shared by all qubits, or one per qubit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerQubit {
    Uniform(f64),
    Each(Vec<f64>),
}

impl PerQubit {
    pub fn get(&self, j: usize) -> f64 {
        match self {
            PerQubit::Uniform(v) => *v,
            PerQubit::Each(v) => v[j],
        }
    }

    fn check(&self, name: &str, n: usize) -> Result<()> {
        if let PerQubit::Each(v) = self {
            if v.len() != n {
                return invalid(format!("{name} has {} entries for {n} qubits", v.len()));
            }
        }
        Ok(())
    }

    fn values(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        (0..n).map(move |j| self.get(j))
    }
}

/// Time-dependent classical drive amplitude f(t) or h(t).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Envelope {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// amplitude · cos(frequency · t + phase)
    Cosine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Envelope {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Envelope::Zero => 0.0,
            Envelope::Constant { value } => value,
            Envelope::Cosine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (frequency * t + phase).cos(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Envelope::Zero => true,
            Envelope::Constant { value } => value == 0.0,
            Envelope::Cosine { amplitude, .. } => amplitude == 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainBoundary {
    #[default]
    Open,
    Periodic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub n_qubits: usize,
    /// Static bias ε_j.
    pub eps: PerQubit,
    /// Tunnelling Δ_j.
    pub delta: PerQubit,
    pub omega_a: f64,
    pub omega_b: f64,
    pub g_a: PerQubit,
    pub g_b: PerQubit,
    pub gamma_z: f64,
    pub gamma_xy: f64,
    pub gamma_b: f64,
    /// Nearest-neighbour σ^z σ^z coupling of the scaling chain.
    pub g_qq: f64,
    pub chain_boundary: ChainBoundary,
    /// White-noise intensity D of the chain bias noise.
    pub noise_d: f64,
    /// Common harmonic drive ε·sin(ωt) of the chain bias.
    pub drive_amp: f64,
    pub drive_freq: f64,
    pub m_a: usize,
    pub m_b: usize,
    pub f_envelope: Envelope,
    pub h_envelope: Envelope,
}

impl Default for ModelParams {
    /// Two-qubit detector with resonant input and readout modes.
    fn default() -> Self {
        let omega_b = 0.5;
        Self {
            n_qubits: 2,
            eps: PerQubit::Uniform(1.0),
            delta: PerQubit::Uniform(0.0),
            omega_a: 0.5,
            omega_b,
            g_a: PerQubit::Uniform(0.01),
            g_b: PerQubit::Uniform(0.01),
            gamma_z: 1e-3,
            gamma_xy: 1e-3,
            gamma_b: 1e-3 * omega_b,
            g_qq: 0.0,
            chain_boundary: ChainBoundary::Open,
            noise_d: DEFAULT_NOISE_D,
            drive_amp: 0.05,
            drive_freq: 0.8,
            m_a: 8,
            m_b: 6,
            f_envelope: Envelope::Zero,
            h_envelope: Envelope::Zero,
        }
    }
}

/// Chain bias-noise intensity used when no value is configured.
pub const DEFAULT_NOISE_D: f64 = 0.05;

impl ModelParams {
    /// Scaling-chain regime: qubits split by Δ = 1 with no static bias.
    pub fn chain(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            eps: PerQubit::Uniform(0.0),
            delta: PerQubit::Uniform(1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("eps", &self.eps),
            ("delta", &self.delta),
            ("g_a", &self.g_a),
            ("g_b", &self.g_b),
        ] {
            p.check(name, self.n_qubits)?;
        }
        let nonneg = [
            ("omega_a", self.omega_a),
            ("omega_b", self.omega_b),
            ("gamma_z", self.gamma_z),
            ("gamma_xy", self.gamma_xy),
            ("gamma_b", self.gamma_b),
            ("noise_d", self.noise_d),
            ("drive_freq", self.drive_freq),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        for (name, p) in [("g_a", &self.g_a), ("g_b", &self.g_b)] {
            if p.values(self.n_qubits).any(|v| !(v >= 0.0)) {
                return invalid(format!("{name} must be >= 0"));
            }
        }
        if self.m_a < 2 || self.m_b < 2 {
            return invalid("mode truncations must be >= 2");
        }
        Ok(())
    }

    pub fn full_layout(&self) -> Result<Arc<HilbertLayout>> {
        Ok(HilbertLayout::new(self.n_qubits, Some(self.m_a), Some(self.m_b))?.shared())
    }

    pub fn chain_layout(&self) -> Result<Arc<HilbertLayout>> {
        Ok(HilbertLayout::qubits(self.n_qubits)?.shared())
    }

    /// Splitting √(Δ_j² + ε_j²) of qubit j.
    pub fn qubit_splitting(&self, j: usize) -> f64 {
        self.delta.get(j).hypot(self.eps.get(j))
    }
}

/// Unitary whose columns are the ground and excited eigenvectors of the
/// static qubit term −½(Δσ^x + εσ^z). Identity when Δ = 0 and ε ≥ 0.
pub fn qubit_frame(delta: f64, eps: f64) -> Matrix {
    let theta = delta.atan2(eps);
    let (s, c) = (theta / 2.0).sin_cos();
    Matrix::from_rows(&[
        &[C64::new(c, 0.0), C64::new(-s, 0.0)],
        &[C64::new(s, 0.0), C64::new(c, 0.0)],
    ])
}

/// The detector Hamiltonian split by time dependence:
/// H(t) = H_static + f(t)(a + a†) + h(t)(b + b†).
#[derive(Clone, Debug)]
pub struct DetectorHamiltonian {
    pub static_part: Operator,
    pub input_quadrature: Operator,
    pub readout_quadrature: Operator,
    pub f: Envelope,
    pub h: Envelope,
}

impl DetectorHamiltonian {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let layout = params.full_layout()?;
        let a = annihilation(params.m_a)?;
        let b = annihilation(params.m_b)?;
        let xa = &a + &a.adjoint();
        let xb = &b + &b.adjoint();
        let na = a.adjoint().matmul(&a);
        let nb = b.adjoint().matmul(&b);
        let half = Matrix::identity(params.m_a).scale(C64::new(0.5, 0.0));
        let half_b = Matrix::identity(params.m_b).scale(C64::new(0.5, 0.0));
        let sx = pauli(PauliAxis::X);
        let sz = pauli(PauliAxis::Z);

        let mut h = embed(&(&na + &half), Subsystem::InputMode, &layout)?.scale(re(params.omega_a));
        h.add_scaled(
            re(params.omega_b),
            &embed(&(&nb + &half_b), Subsystem::ReadoutMode, &layout)?,
        );
        for j in 0..params.n_qubits {
            let q = Subsystem::Qubit(j);
            let local = &(&sx * params.delta.get(j)) + &(&sz * params.eps.get(j));
            h.add_scaled(re(-0.5), &embed(&local, q, &layout)?);
            let ga = params.g_a.get(j);
            if ga != 0.0 {
                let v = embed_product(&[(q, &sx), (Subsystem::InputMode, &xa)], &layout)?;
                h.add_scaled(re(ga), &v);
            }
            let gb = params.g_b.get(j);
            if gb != 0.0 {
                let v = embed_product(&[(q, &sx), (Subsystem::ReadoutMode, &xb)], &layout)?;
                h.add_scaled(re(gb), &v);
            }
        }
        Ok(Self {
            static_part: h,
            input_quadrature: embed(&xa, Subsystem::InputMode, &layout)?,
            readout_quadrature: embed(&xb, Subsystem::ReadoutMode, &layout)?,
            f: params.f_envelope.clone(),
            h: params.h_envelope.clone(),
        })
    }

    pub fn is_static(&self) -> bool {
        self.f.is_zero() && self.h.is_zero()
    }

    pub fn at(&self, t: f64) -> Operator {
        let mut h = self.static_part.clone();
        let (ft, ht) = (self.f.at(t), self.h.at(t));
        if ft != 0.0 {
            h.add_scaled(re(ft), &self.input_quadrature);
        }
        if ht != 0.0 {
            h.add_scaled(re(ht), &self.readout_quadrature);
        }
        h
    }
}

pub fn build_full_hamiltonian(params: &ModelParams, t: f64) -> Result<Operator> {
    Ok(DetectorHamiltonian::new(params)?.at(t))
}

#[derive(Clone, Debug)]
pub struct LindbladChannel {
    pub label: String,
    /// Includes the √(2Γ) prefactor.
    pub operator: Operator,
    /// Γ
    pub rate: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LindbladSet {
    pub channels: Vec<LindbladChannel>,
}

impl LindbladSet {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Channels whose operator is not identically zero.
    pub fn effective(&self) -> impl Iterator<Item = &LindbladChannel> {
        self.channels
            .iter()
            .filter(|c| c.rate > 0.0 && c.operator.matrix().max_abs() > 0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LindbladChannel> {
        self.channels.iter()
    }
}

fn qubit_channels(
    params: &ModelParams,
    layout: &Arc<HilbertLayout>,
    frame: impl Fn(usize) -> Matrix,
) -> Result<Vec<LindbladChannel>> {
    // In frame coordinates index 0 is the ground state, index 1 the excited one.
    let relax = pauli(PauliAxis::Raising);
    let excited = pauli(PauliAxis::Lowering).matmul(&relax);
    let mut out = Vec::with_capacity(2 * params.n_qubits);
    for j in 0..params.n_qubits {
        let u = frame(j);
        let rotate = |m: &Matrix| u.matmul(m).matmul(&u.adjoint());
        let q = Subsystem::Qubit(j);
        out.push(LindbladChannel {
            label: format!("relax_q{j}"),
            operator: embed(&rotate(&relax), q, layout)?.scale(re((2.0 * params.gamma_z).sqrt())),
            rate: params.gamma_z,
        });
        out.push(LindbladChannel {
            label: format!("dephase_q{j}"),
            operator: embed(&rotate(&excited), q, layout)?
                .scale(re((2.0 * params.gamma_xy).sqrt())),
            rate: params.gamma_xy,
        });
    }
    Ok(out)
}

/// Per-qubit relaxation √(2Γ_z)|g⟩⟨e| and dephasing √(2Γ_xy)|e⟩⟨e|, then
/// readout loss √(2Γ_b) b.
///
/// |g⟩ and |e⟩ are the eigenstates of the static qubit term −½(Δσ^x + εσ^z).
/// At Δ = 0, ε > 0 the ground state is σ^z = +1, so the relaxation channel is
/// the σ_+ matrix of the basis convention in `operator`: it lowers the qubit
/// energy.
pub fn build_lindblads(params: &ModelParams) -> Result<LindbladSet> {
    params.validate()?;
    let layout = params.full_layout()?;
    let mut channels = qubit_channels(params, &layout, |j| {
        qubit_frame(params.delta.get(j), params.eps.get(j))
    })?;
    let b = annihilation(params.m_b)?;
    channels.push(LindbladChannel {
        label: "readout_loss".into(),
        operator: embed(&b, Subsystem::ReadoutMode, &layout)?
            .scale(re((2.0 * params.gamma_b).sqrt())),
        rate: params.gamma_b,
    });
    Ok(LindbladSet { channels })
}

/// Qubit-only channel set for the scaling chain, in the eigenframe of −½Δ_jσ^x.
pub fn build_chain_lindblads(params: &ModelParams) -> Result<LindbladSet> {
    params.validate()?;
    let layout = params.chain_layout()?;
    let channels = qubit_channels(params, &layout, |j| qubit_frame(params.delta.get(j), 0.0))?;
    Ok(LindbladSet { channels })
}

/// H = −½Σ_j[Δ_j σ^x_j + ε_j(t) σ^z_j] + g Σ_j σ^z_j σ^z_{j+1}, with
/// ε_j(t) = ε·sin(ωt) + noise_samples[j].
pub fn build_chain_hamiltonian(
    params: &ModelParams,
    t: f64,
    noise_samples: &[f64],
) -> Result<Operator> {
    params.validate()?;
    if noise_samples.len() != params.n_qubits {
        return invalid(format!(
            "expected {} noise samples, got {}",
            params.n_qubits,
            noise_samples.len()
        ));
    }
    let layout = params.chain_layout()?;
    let sx = pauli(PauliAxis::X);
    let sz = pauli(PauliAxis::Z);
    let common = params.drive_amp * (params.drive_freq * t).sin();
    let mut h = Operator::zeros(&layout);
    for j in 0..params.n_qubits {
        let bias = common + noise_samples[j];
        let local = &(&sx * params.delta.get(j)) + &(&sz * bias);
        h.add_scaled(re(-0.5), &embed(&local, Subsystem::Qubit(j), &layout)?);
    }
    if params.g_qq != 0.0 {
        for (j, k) in chain_bonds(params.n_qubits, params.chain_boundary) {
            let zz = embed_product(
                &[(Subsystem::Qubit(j), &sz), (Subsystem::Qubit(k), &sz)],
                &layout,
            )?;
            h.add_scaled(re(params.g_qq), &zz);
        }
    }
    Ok(h)
}

pub fn chain_bonds(n: usize, boundary: ChainBoundary) -> Vec<(usize, usize)> {
    let mut bonds: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|j| (j, j + 1)).collect();
    if boundary == ChainBoundary::Periodic && n > 2 {
        bonds.push((n - 1, 0));
    }
    bonds
}

/// γ_j = (g_j^a)² / δΩ_j with δΩ_j = |ω_a − √(Δ_j² + ε_j²)|.
pub fn dispersive_shift(params: &ModelParams, j: usize) -> Result<f64> {
    let (g, detuning) = dispersive_inputs(params, j)?;
    Ok(g * g / detuning)
}

/// Vacuum-mediated qubit-qubit coupling (g^a)² / (2δΩ) for qubit j.
pub fn effective_qubit_coupling(params: &ModelParams, j: usize) -> Result<f64> {
    Ok(dispersive_shift(params, j)? / 2.0)
}

fn dispersive_inputs(params: &ModelParams, j: usize) -> Result<(f64, f64)> {
    if j >= params.n_qubits {
        return invalid(format!("qubit index {j} out of range"));
    }
    let g = params.g_a.get(j);
    let detuning = (params.omega_a - params.qubit_splitting(j)).abs();
    if detuning < 1e-14 {
        return Err(Error::Singular(format!(
            "qubit {j} is resonant with the input mode (δΩ = 0)"
        )));
    }
    if g > 0.0 && detuning / g < 10.0 {
        log::warn!(
            "qubit {j}: detuning/coupling = {:.2} < 10, dispersive reduction is unreliable",
            detuning / g
        );
    }
    Ok((g, detuning))
}

/// Discretized white noise √(2D)ξ_j(t): each step draws independent
/// Gaussians of variance 2D/dt per channel.
#[derive(Clone, Debug)]
pub struct WhiteNoise {
    rng: ChaCha8Rng,
    scale: f64,
}

impl WhiteNoise {
    pub fn new(seed: u64, intensity: f64, dt: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            scale: (2.0 * intensity / dt).sqrt(),
        }
    }

    pub fn sample(&mut self) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.scale * z
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.sample();
        }
    }
}

/// Deterministic seed fan-out (SplitMix64 over master, stream and index).
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}
