//! Periodicity-coded autoencoder separation and its NMF / deep-clustering baselines.
//!
//! All DAE methods share one front half ([`analyze_dae`]): STFT, normalized
//! log-power features, an autoencoder trained on the recording's own frames
//! and the latent trajectories of every frame. The back half
//! ([`separate_analyzed`]) groups latent units, switches off the units of the
//! other source and decodes.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::factorization::{
    assign_cluster_roles, informative_rows, nmf, sparse_nmf_cluster, ClusterAssignment, ClusterConfig, Label, NmfConfig, NmfFactors,
    Role,
};
use crate::neuralnet::{build_dae_c, build_dae_f, train, Architecture, DaeModel, TrainConfig};
use crate::signal_io::Waveform;
use crate::spectral::{
    from_masked, istft, stft, to_lps, HighBandPolicy, LpsBand, DEFAULT_BAND_BINS, DEFAULT_FRAME_LEN, DEFAULT_HOP,
};
use crate::{Error, Result};

pub const MIN_INPUT_SECONDS: f64 = 3.0;
pub const EPS_MASK: f64 = 1e-12;
/// Fewest trajectory frames accepted by [`mfa`].
pub const MIN_MFA_FRAMES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Method {
    #[default]
    PcDaeC,
    PcDaeF,
    DcDae,
    PcNmf,
    DcNmf,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::PcDaeC, Method::PcDaeF, Method::DcDae, Method::PcNmf, Method::DcNmf];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::PcDaeC => "pc-dae-c",
            Method::PcDaeF => "pc-dae-f",
            Method::DcDae => "dc-dae",
            Method::PcNmf => "pc-nmf",
            Method::DcNmf => "dc-nmf",
        }
    }

    pub fn uses_dae(self) -> bool {
        matches!(self, Method::PcDaeC | Method::PcDaeF | Method::DcDae)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}` (expected pc-dae-c, pc-dae-f, dc-dae, pc-nmf or dc-nmf)")))
    }
}

/// How separated spectra are turned into source magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// Ratio masks applied to a base magnitude.
    #[default]
    Mask,
    /// Decoded magnitudes used as they are.
    Direct,
}

/// Magnitude the ratio masks are applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskBase {
    #[default]
    Mixture,
    /// The autoencoder's reconstruction of the mixture.
    Reconstruction,
}

keyword_enum!(MaskMode, MaskMode::Mask => "mask", MaskMode::Direct => "direct");
keyword_enum!(MaskBase, MaskBase::Mixture => "mixture", MaskBase::Reconstruction => "reconstruction");

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationConfig {
    pub method: Method,
    pub frame_len: usize,
    pub hop: usize,
    pub band_bins: usize,
    pub mask_mode: MaskMode,
    pub mask_base: MaskBase,
    pub high_band: HighBandPolicy,
    pub train: TrainConfig,
    pub nmf_rank: usize,
    pub nmf_iters: usize,
    pub lambda: f64,
    pub cluster_iters: usize,
    /// Scale each clustering input row to unit norm before factorizing.
    pub normalize_rows: bool,
    /// PC-NMF only: cluster the raw activations instead of their modulation spectra.
    pub bypass_mfa: bool,
    pub seed: u64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            method: Method::default(),
            frame_len: DEFAULT_FRAME_LEN,
            hop: DEFAULT_HOP,
            band_bins: DEFAULT_BAND_BINS,
            mask_mode: MaskMode::default(),
            mask_base: MaskBase::default(),
            high_band: HighBandPolicy::default(),
            train: TrainConfig::default(),
            nmf_rank: 20,
            nmf_iters: 500,
            lambda: 0.1,
            cluster_iters: 500,
            normalize_rows: true,
            bypass_mfa: false,
            seed: 17,
        }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.frame_len < 2 || !self.frame_len.is_multiple_of(2) || self.hop == 0 || self.hop > self.frame_len / 2 || !self.frame_len.is_multiple_of(self.hop) {
            return Err(Error::InvalidFrameConfig(format!(
                "frame length {} and hop {} must be even / dividing with at least 50% overlap",
                self.frame_len, self.hop
            )));
        }
        if self.band_bins == 0 || self.band_bins > self.frame_len / 2 + 1 {
            return bad(format!("band of {} bins does not fit a {}-point frame", self.band_bins, self.frame_len));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        if !(self.train.learning_rate.is_finite() && self.train.learning_rate >= 0.0) {
            return bad(format!("learning rate {} must be finite and nonnegative", self.train.learning_rate));
        }
        if self.nmf_rank < 2 || self.nmf_iters == 0 || self.cluster_iters == 0 {
            return bad("NMF rank must be at least 2 and iteration counts positive".into());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("sparsity weight {} must be finite and nonnegative", self.lambda));
        }
        if self.method == Method::PcDaeC && self.band_bins < 8 {
            return bad("the convolutional autoencoder needs at least 8 band bins".into());
        }
        Ok(())
    }

    fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig { k: 2, lambda: self.lambda, max_iters: self.cluster_iters, tol: 1e-7, seed: self.seed }
    }
}

/// Modulation spectra of trajectories: `values` is `M x (N/2 + 1)`, DC column zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicCode {
    pub values: Array2<f64>,
    /// Hz for each column.
    pub freq_axis: Vec<f64>,
}

/// What a separation produced, plus the matrices behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    pub method: Method,
    pub mask_mode: MaskMode,
    pub heart: Waveform,
    pub lung: Waveform,
    /// `(heart, lung)` N x F ratio masks in mask mode.
    pub masks: Option<(Array2<f64>, Array2<f64>)>,
    pub assignment: ClusterAssignment,
    /// Latent trajectories (DAE) or NMF activations, one row per unit.
    pub trajectories: Array2<f64>,
    /// Modulation spectra of the trajectories.
    pub code: PeriodicCode,
    /// Matrix that was actually clustered.
    pub cluster_input: Array2<f64>,
    /// Deactivated latent matrices `(heart, lung)` for DAE methods.
    pub deactivated: Option<(Array2<f64>, Array2<f64>)>,
    /// Training loss per epoch (DAE) or objective per iteration (NMF).
    pub loss_history: Vec<f64>,
}

/// Latent matrix `M x N`: column `n` is the encoding of frame `n`.
pub fn latent_trajectories(model: &DaeModel, lps: &LpsBand) -> Result<Array2<f64>> {
    if model.input_dim() != lps.band_bins() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} feature bins", model.input_dim()),
            actual: format!("{} feature bins", lps.band_bins()),
        });
    }
    Ok(model.encode(lps.lps.view())?.reversed_axes().as_standard_layout().into_owned())
}

/// Row-wise DFT magnitude with the DC column zeroed; column `d` is `d·frame_rate/N` Hz.
///
/// Constant rows map to exact zero rows.
pub fn mfa(traj: ArrayView2<f64>, frame_rate: f64) -> Result<PeriodicCode> {
    let n = traj.ncols();
    if n < MIN_MFA_FRAMES {
        return Err(Error::InvalidConfig(format!("modulation analysis needs at least {MIN_MFA_FRAMES} frames, got {n}")));
    }
    let cols = n / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut values = Array2::zeros((traj.nrows(), cols));
    for (row, mut out) in traj.rows().into_iter().zip(values.rows_mut()) {
        let first = row[0];
        if row.iter().all(|&v| v == first) {
            continue;
        }
        for (b, &v) in buf.iter_mut().zip(row.iter()) {
            *b = Complex64::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (o, b) in out.iter_mut().zip(&buf).skip(1) {
            *o = b.norm();
        }
    }
    let freq_axis = (0..cols).map(|d| d as f64 * frame_rate / n as f64).collect();
    Ok(PeriodicCode { values, freq_axis })
}

/// Scales each row to unit Euclidean norm; zero rows stay zero.
pub fn normalize_rows(m: ArrayView2<f64>) -> Array2<f64> {
    let mut out = m.to_owned();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

/// Groups latent units by the periodicity of their trajectories and names the groups.
pub fn pc_group(traj: ArrayView2<f64>, frame_rate: f64, config: &SeparationConfig) -> Result<(PeriodicCode, ClusterAssignment)> {
    let code = mfa(traj, frame_rate)?;
    let input = if config.normalize_rows { normalize_rows(code.values.view()) } else { code.values.clone() };
    let mut assignment = sparse_nmf_cluster(input.view(), &config.cluster_config())?;
    assign_cluster_roles(code.values.view(), &code.freq_axis, &mut assignment)?;
    Ok((code, assignment))
}

/// Copy of `traj` where every unit that belongs to the other source is held at its own minimum.
pub fn deactivate(traj: ArrayView2<f64>, assignment: &ClusterAssignment, target: Role) -> Result<Array2<f64>> {
    if assignment.len() != traj.nrows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labelled rows", traj.nrows()),
            actual: format!("{} labels", assignment.len()),
        });
    }
    if target == Role::Shared {
        return Err(Error::InvalidConfig("deactivation target must be heart or lung".into()));
    }
    let mut out = traj.to_owned();
    for (j, mut row) in out.rows_mut().into_iter().enumerate() {
        let role = assignment.role(j);
        if role != target && role != Role::Shared {
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            row.fill(min);
        }
    }
    Ok(out)
}

fn decode_trajectories(model: &DaeModel, traj: &Array2<f64>) -> Result<Array2<f64>> {
    model.decode(traj.t().as_standard_layout().view())
}

/// Decodes both deactivated latent matrices; returns de-normalized log-power `(heart, lung)`, each N x F.
pub fn reconstruct_direct(model: &DaeModel, lps: &LpsBand, z_heart: &Array2<f64>, z_lung: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let heart = decode_trajectories(model, z_heart)?;
    let lung = decode_trajectories(model, z_lung)?;
    Ok((lps.denormalize(&heart), lps.denormalize(&lung)))
}

/// Complementary ratio masks from two nonnegative magnitudes.
///
/// Half of the floor goes to each numerator so the pair sums to one and silent bins split evenly.
pub fn ratio_masks(heart: &Array2<f64>, lung: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if heart.dim() != lung.dim() {
        return Err(Error::ShapeMismatch { expected: format!("{:?}", heart.dim()), actual: format!("{:?}", lung.dim()) });
    }
    let half = 0.5 * EPS_MASK;
    let mut mh = Array2::zeros(heart.dim());
    let mut ml = Array2::zeros(heart.dim());
    ndarray::Zip::from(&mut mh).and(&mut ml).and(heart).and(lung).for_each(|a, b, &h, &l| {
        let den = h + l + EPS_MASK;
        *a = (h + half) / den;
        *b = (l + half) / den;
    });
    Ok((mh, ml))
}

fn resynthesize(lps: &LpsBand, magnitude: &Array2<f64>, policy: HighBandPolicy, len: usize, rate: u32) -> Result<Waveform> {
    let spec = from_masked(lps, magnitude, policy)?;
    let mut samples = istft(&spec)?.into_samples();
    samples.resize(len, 0.0);
    Waveform::new(samples, rate)
}

/// Separated waveforms and, in mask mode, the masks that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub heart: Waveform,
    pub lung: Waveform,
    pub masks: Option<(Array2<f64>, Array2<f64>)>,
}

/// Decodes both latents, forms ratio masks on magnitudes and applies them to `base`.
pub fn reconstruct_mask(
    model: &DaeModel,
    z_heart: &Array2<f64>,
    z_lung: &Array2<f64>,
    lps: &LpsBand,
    base: MaskBase,
    policy: HighBandPolicy,
    len: usize,
) -> Result<Reconstruction> {
    let m_heart = lps.magnitude_of(&decode_trajectories(model, z_heart)?);
    let m_lung = lps.magnitude_of(&decode_trajectories(model, z_lung)?);
    let base = match base {
        MaskBase::Mixture => lps.band_magnitude(),
        MaskBase::Reconstruction => lps.magnitude_of(&model.decode(lps.lps.view())?),
    };
    apply_masks(lps, &m_heart, &m_lung, &base, policy, len)
}

fn apply_masks(lps: &LpsBand, heart: &Array2<f64>, lung: &Array2<f64>, base: &Array2<f64>, policy: HighBandPolicy, len: usize) -> Result<Reconstruction> {
    let (mh, ml) = ratio_masks(heart, lung)?;
    let rate = lps.sample_rate;
    Ok(Reconstruction {
        heart: resynthesize(lps, &(&mh * base), policy, len, rate)?,
        lung: resynthesize(lps, &(&ml * base), policy, len, rate)?,
        masks: Some((mh, ml)),
    })
}

fn check_input(mixture: &Waveform, config: &SeparationConfig) -> Result<()> {
    config.validate()?;
    let seconds = mixture.duration_secs();
    if seconds < MIN_INPUT_SECONDS {
        return Err(Error::InputTooShort { seconds, min_seconds: MIN_INPUT_SECONDS });
    }
    if mixture.len() < config.frame_len {
        return Err(Error::SignalTooShort { len: mixture.len(), frame_len: config.frame_len });
    }
    Ok(())
}

fn analyze_lps(mixture: &Waveform, config: &SeparationConfig) -> Result<LpsBand> {
    check_input(mixture, config)?;
    to_lps(&stft(mixture, config.frame_len, config.hop)?, config.band_bins)
}

/// A trained autoencoder together with the features and latents of the recording it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct DaeAnalysis {
    pub lps: LpsBand,
    pub model: DaeModel,
    /// `M x N` latent trajectories.
    pub latent: Array2<f64>,
    pub signal_len: usize,
}

/// Trains an autoencoder of the given architecture on the mixture's own frames.
pub fn analyze_dae(mixture: &Waveform, architecture: Architecture, config: &SeparationConfig) -> Result<DaeAnalysis> {
    let lps = analyze_lps(mixture, config)?;
    let mut model = match architecture {
        Architecture::FullyConnected => build_dae_f(lps.band_bins(), config.seed)?,
        Architecture::Convolutional => build_dae_c(lps.band_bins(), config.seed)?,
        Architecture::Custom => return Err(Error::InvalidConfig("separation needs a fully-connected or convolutional model".into())),
    };
    train(&mut model, lps.lps.view(), &config.train)?;
    let latent = latent_trajectories(&model, &lps)?;
    Ok(DaeAnalysis { lps, model, latent, signal_len: mixture.len() })
}

/// How latent units are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    /// Cluster the modulation spectra of the trajectories.
    Periodicity,
    /// Cluster the (row-normalized) trajectories themselves.
    Trajectory,
}

/// Groups, deactivates and reconstructs from an already trained autoencoder.
pub fn separate_analyzed(analysis: &DaeAnalysis, grouping: Grouping, method: Method, config: &SeparationConfig) -> Result<SeparationResult> {
    let lps = &analysis.lps;
    let latent = &analysis.latent;
    let (code, cluster_input, assignment) = match grouping {
        Grouping::Periodicity => {
            let (code, assignment) = pc_group(latent.view(), lps.frame_rate(), config)?;
            let input = if config.normalize_rows { normalize_rows(code.values.view()) } else { code.values.clone() };
            (code, input, assignment)
        }
        Grouping::Trajectory => {
            let code = mfa(latent.view(), lps.frame_rate())?;
            let input = normalize_rows(latent.view());
            let mut assignment = sparse_nmf_cluster(input.view(), &config.cluster_config())?;
            assign_cluster_roles(code.values.view(), &code.freq_axis, &mut assignment)?;
            (code, input, assignment)
        }
    };
    let z_heart = deactivate(latent.view(), &assignment, Role::Heart)?;
    let z_lung = deactivate(latent.view(), &assignment, Role::Lung)?;
    let model = &analysis.model;
    let rec = render_dae(analysis, &z_heart, &z_lung, config)?;
    Ok(SeparationResult {
        method,
        mask_mode: config.mask_mode,
        heart: rec.heart,
        lung: rec.lung,
        masks: rec.masks,
        assignment,
        trajectories: latent.clone(),
        code,
        cluster_input,
        deactivated: Some((z_heart, z_lung)),
        loss_history: model.history.clone(),
    })
}

fn render_dae(analysis: &DaeAnalysis, z_heart: &Array2<f64>, z_lung: &Array2<f64>, config: &SeparationConfig) -> Result<Reconstruction> {
    let (model, lps, len) = (&analysis.model, &analysis.lps, analysis.signal_len);
    match config.mask_mode {
        MaskMode::Mask => reconstruct_mask(model, z_heart, z_lung, lps, config.mask_base, config.high_band, len),
        MaskMode::Direct => {
            let (yh, yl) = reconstruct_direct(model, lps, z_heart, z_lung)?;
            Ok(Reconstruction {
                heart: resynthesize(lps, &yh.mapv(|l| (0.5 * l).exp()), config.high_band, len, lps.sample_rate)?,
                lung: resynthesize(lps, &yl.mapv(|l| (0.5 * l).exp()), config.high_band, len, lps.sample_rate)?,
                masks: None,
            })
        }
    }
}

/// Renders an existing DAE separation again with the reconstruction settings of `config`
/// (mask mode, mask base, high band), keeping its grouping.
pub fn rerender_dae(analysis: &DaeAnalysis, result: &SeparationResult, config: &SeparationConfig) -> Result<SeparationResult> {
    let (z_heart, z_lung) = result
        .deactivated
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("result has no deactivated latents to render".into()))?;
    let rec = render_dae(analysis, z_heart, z_lung, config)?;
    Ok(SeparationResult { mask_mode: config.mask_mode, heart: rec.heart, lung: rec.lung, masks: rec.masks, ..result.clone() })
}

/// Full periodicity-coded autoencoder pipeline with a dense (`FullyConnected`) or convolutional model.
pub fn separate_pcdae(mixture: &Waveform, architecture: Architecture, config: &SeparationConfig) -> Result<SeparationResult> {
    let method = if architecture == Architecture::FullyConnected { Method::PcDaeF } else { Method::PcDaeC };
    let analysis = analyze_dae(mixture, architecture, config)?;
    separate_analyzed(&analysis, Grouping::Periodicity, method, config)
}

/// Deep-clustering baseline: convolutional autoencoder, trajectories clustered without modulation analysis.
pub fn separate_dc_dae(mixture: &Waveform, config: &SeparationConfig) -> Result<SeparationResult> {
    let analysis = analyze_dae(mixture, Architecture::Convolutional, config)?;
    separate_analyzed(&analysis, Grouping::Trajectory, Method::DcDae, config)
}

/// DC-NMF: NMF of the band magnitude, activations clustered directly.
pub fn separate_dc_nmf(mixture: &Waveform, config: &SeparationConfig) -> Result<SeparationResult> {
    separate_nmf(mixture, false, Method::DcNmf, config)
}

/// PC-NMF: NMF of the band magnitude, activations clustered by their modulation spectra.
///
/// With `config.bypass_mfa` this takes exactly the DC-NMF path.
pub fn separate_pc_nmf(mixture: &Waveform, config: &SeparationConfig) -> Result<SeparationResult> {
    separate_nmf(mixture, !config.bypass_mfa, Method::PcNmf, config)
}

/// NMF of a recording's band magnitude, shared by both NMF baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfAnalysis {
    pub lps: LpsBand,
    pub factors: NmfFactors,
    pub signal_len: usize,
}

pub fn analyze_nmf(mixture: &Waveform, config: &SeparationConfig) -> Result<NmfAnalysis> {
    let lps = analyze_lps(mixture, config)?;
    let nmf_cfg = NmfConfig { rank: config.nmf_rank, max_iters: config.nmf_iters, tol: 1e-6, seed: config.seed };
    let factors = nmf(lps.band_magnitude().t(), &nmf_cfg)?;
    Ok(NmfAnalysis { lps, factors, signal_len: mixture.len() })
}

fn separate_nmf(mixture: &Waveform, periodicity: bool, method: Method, config: &SeparationConfig) -> Result<SeparationResult> {
    separate_nmf_analyzed(&analyze_nmf(mixture, config)?, periodicity, method, config)
}

/// Groups NMF components by their activations (`periodicity = false`) or the
/// modulation spectra of those activations, then masks the mixture.
pub fn separate_nmf_analyzed(analysis: &NmfAnalysis, periodicity: bool, method: Method, config: &SeparationConfig) -> Result<SeparationResult> {
    let lps = &analysis.lps;
    let factors = &analysis.factors;
    let len = analysis.signal_len;
    let activations = factors.h.clone();
    let code = mfa(activations.view(), lps.frame_rate())?;
    let raw = if periodicity { code.values.clone() } else { activations.clone() };
    let cluster_input = if config.normalize_rows || !periodicity { normalize_rows(raw.view()) } else { raw };
    let mut assignment = sparse_nmf_cluster(cluster_input.view(), &config.cluster_config())?;
    name_by_summed_activation(&activations, lps.frame_rate(), &mut assignment)?;

    let part = |role: Role| -> Array2<f64> {
        let keep: Vec<usize> = (0..assignment.len()).filter(|&j| matches!(assignment.role(j), r if r == role || r == Role::Shared)).collect();
        factors.w.select(Axis(1), &keep).dot(&factors.h.select(Axis(0), &keep)).reversed_axes()
    };
    let (v_heart, v_lung) = (part(Role::Heart), part(Role::Lung));
    let rate = lps.sample_rate;
    let rec = match config.mask_mode {
        MaskMode::Mask => apply_masks(lps, &v_heart, &v_lung, &lps.band_magnitude(), config.high_band, len)?,
        MaskMode::Direct => Reconstruction {
            heart: resynthesize(lps, &v_heart, config.high_band, len, rate)?,
            lung: resynthesize(lps, &v_lung, config.high_band, len, rate)?,
            masks: None,
        },
    };
    Ok(SeparationResult {
        method,
        mask_mode: config.mask_mode,
        heart: rec.heart,
        lung: rec.lung,
        masks: rec.masks,
        assignment,
        trajectories: activations,
        code,
        cluster_input,
        deactivated: None,
        loss_history: factors.loss_history.clone(),
    })
}

/// Names NMF groups by the modulation centroid of each group's summed activation.
fn name_by_summed_activation(h: &Array2<f64>, frame_rate: f64, assignment: &mut ClusterAssignment) -> Result<()> {
    let mut sums = Array2::zeros((2, h.ncols()));
    for (j, label) in assignment.labels.iter().enumerate() {
        if let Label::Cluster(c) = *label {
            let mut row = sums.row_mut(c);
            row += &h.row(j);
        }
    }
    let code = mfa(sums.view(), frame_rate)?;
    let mut pair = ClusterAssignment {
        labels: vec![Label::Cluster(0), Label::Cluster(1)],
        k: 2,
        membership: Array2::zeros((2, 2)),
        loss_history: Vec::new(),
        centroid_freq: Vec::new(),
        heart_cluster: None,
    };
    assign_cluster_roles(code.values.view(), &code.freq_axis, &mut pair)?;
    assignment.centroid_freq = pair.centroid_freq;
    assignment.heart_cluster = pair.heart_cluster;
    Ok(())
}

/// Runs `config.method` end to end.
pub fn separate(mixture: &Waveform, config: &SeparationConfig) -> Result<SeparationResult> {
    match config.method {
        Method::PcDaeC => separate_pcdae(mixture, Architecture::Convolutional, config),
        Method::PcDaeF => separate_pcdae(mixture, Architecture::FullyConnected, config),
        Method::DcDae => separate_dc_dae(mixture, config),
        Method::PcNmf => separate_pc_nmf(mixture, config),
        Method::DcNmf => separate_dc_nmf(mixture, config),
    }
}

/// Projects mean-centered rows onto their top two principal directions; returns `M x 2`.
///
/// The directions come from subspace iteration on the row covariance. A
/// second direction carrying no variance yields an exactly zero column.
pub fn pca_scatter(rows: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (m, n) = rows.dim();
    if m < 2 || n == 0 {
        return Err(Error::InvalidConfig(format!("PCA needs at least 2 rows, got {m}")));
    }
    let mean = rows.mean_axis(Axis(0)).expect("non-empty");
    let x = &rows - &mean;
    let dims = n.min(2);
    let mut rng = ChaCha8Rng::seed_from_u64(0x9ca);
    let mut basis = Array2::from_shape_fn((n, dims), |_| rng.random_range(-1.0..1.0));
    orthonormalize(&mut basis);
    for _ in 0..1000 {
        let mut next = x.t().dot(&x.dot(&basis));
        orthonormalize(&mut next);
        let delta = (&next - &basis).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        basis = next;
        if delta < 1e-13 {
            break;
        }
    }
    let mut coords = x.dot(&basis);
    if dims == 2 {
        // Rayleigh–Ritz on the 2-D subspace to order and align the directions.
        let g = coords.t().dot(&coords);
        let (a, b, c) = (g[[0, 0]], g[[0, 1]], g[[1, 1]]);
        let theta = 0.5 * (2.0 * b).atan2(a - c);
        let (s, co) = theta.sin_cos();
        let rot = ndarray::array![[co, -s], [s, co]];
        coords = coords.dot(&rot);
        let v0 = coords.column(0).dot(&coords.column(0));
        let v1 = coords.column(1).dot(&coords.column(1));
        if v1 > v0 {
            coords.invert_axis(Axis(1));
        }
        let (v0, v1) = (v0.max(v1), v0.min(v1));
        if v1 <= 1e-24 * v0.max(f64::MIN_POSITIVE) {
            coords.column_mut(1).fill(0.0);
        }
    } else {
        let zeros = Array2::zeros((m, 1));
        coords = ndarray::concatenate![Axis(1), coords, zeros];
    }
    Ok(coords)
}

fn orthonormalize(basis: &mut Array2<f64>) {
    for j in 0..basis.ncols() {
        for i in 0..j {
            let proj = basis.column(j).dot(&basis.column(i));
            let prev = basis.column(i).to_owned();
            basis.column_mut(j).scaled_add(-proj, &prev);
        }
        let norm = basis.column(j).dot(&basis.column(j)).sqrt();
        if norm > 0.0 {
            basis.column_mut(j).mapv_inplace(|v| v / norm);
        }
    }
}

/// Indices of rows that carry information (non-constant, non-negligible).
pub fn informative_indices(m: ArrayView2<f64>) -> Vec<usize> {
    informative_rows(&m).into_iter().enumerate().filter_map(|(j, ok)| ok.then_some(j)).collect()
}
