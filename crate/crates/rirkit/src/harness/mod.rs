//! Experiment orchestration: configuration, array presets, mask generation,
//! the reconstruction and beamforming evaluations, and CSV emission.

pub mod archive;
pub mod cli;
pub mod config;

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::beamform::{
    apply_beamformer, estimate_noise_cov, mvdr_weights, null_projection_dist,
    steering_for_stft_bins, stft_multi, BeamWeights, StftConfig, DEFAULT_DIAGONAL_LOADING,
};
use crate::diffusion::{
    make_schedule, reconstruct_rir, train_denoiser, DenoiserConfig, DenoiserModel, NoiseSchedule,
    ScheduleKind, TrainConfig, TrainReport,
};
use crate::error::{Error, Result};
use crate::harness::archive::RirArchive;
use crate::harness::config::KvConfig;
use crate::interp::sci_interpolate;
use crate::metrics::{cosine_distance, nmse_db, si_sdr_db, sir_improvement_db};
use crate::patch::{normalize_patch, tile_patches, PadPolicy, PatchGrid};
use crate::roomsim::noise::{
    generate_bandlimited_pink, generate_diffuse_noise, DEFAULT_DIFFUSE_WAVES,
};
use crate::roomsim::scene::{directional_noise, render_scene, SceneSignals};
use crate::roomsim::{simulate_rir, Absorption, ArrayGeometry, RoomSpec};
use crate::types::{MicMask, RirMatrix};

/// Microphone layout presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayPreset {
    /// 16-element uniform linear array.
    Ula16,
    /// Three parallel rows of 21 microphones (63 total), serpentine order.
    ThreeRows,
    /// L-shaped boundary of a 21×21 plane (41 microphones), path order.
    Frame,
    /// Full 21×21 plane (441 microphones), serpentine order.
    Grid,
}

impl ArrayPreset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ula16" => Ok(Self::Ula16),
            "three_rows" => Ok(Self::ThreeRows),
            "frame" => Ok(Self::Frame),
            "grid" => Ok(Self::Grid),
            other => Err(Error::invalid(format!("unknown array preset '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Ula16 => "ula16",
            Self::ThreeRows => "three_rows",
            Self::Frame => "frame",
            Self::Grid => "grid",
        }
    }

    pub fn num_mics(&self) -> usize {
        match self {
            Self::Ula16 => 16,
            Self::ThreeRows => 63,
            Self::Frame => 41,
            Self::Grid => 441,
        }
    }
}

/// Mask selection: one of the four fixed layouts or a random ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskSpec {
    Fixed(u8),
    Random { ratio: f64 },
}

impl MaskSpec {
    pub fn parse(token: &str) -> Result<Self> {
        if let Some(rest) = token.strip_prefix("random:") {
            let ratio: f64 = rest
                .parse()
                .map_err(|_| Error::invalid(format!("bad mask ratio '{rest}'")))?;
            return Ok(MaskSpec::Random { ratio });
        }
        match token {
            "fixed0" => Ok(MaskSpec::Fixed(0)),
            "fixed1" => Ok(MaskSpec::Fixed(1)),
            "fixed2" => Ok(MaskSpec::Fixed(2)),
            "fixed3" => Ok(MaskSpec::Fixed(3)),
            other => Err(Error::invalid(format!(
                "unknown mask '{other}' (expected fixed0..fixed3 or random:<ratio>)"
            ))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            MaskSpec::Fixed(i) => format!("fixed{i}"),
            MaskSpec::Random { ratio } => format!("random:{ratio}"),
        }
    }
}

/// Build an availability mask.
///
/// The fixed presets follow the 16-microphone layouts: preset 0 misses
/// {3, 7, 10, 14}; preset 1 misses the odd indices; preset 2 keeps
/// {0, 5, 10, 15}; preset 3 keeps the first four (one-sided). A random spec
/// marks exactly `round(ratio·N)` channels missing, uniformly without
/// replacement, deterministically per seed.
pub fn make_mask(spec: &MaskSpec, n: usize, seed: u64) -> Result<MicMask> {
    match spec {
        MaskSpec::Fixed(preset) => {
            if n != 16 {
                return Err(Error::invalid(format!(
                    "fixed mask presets are defined for 16 microphones, got {n}"
                )));
            }
            let missing: Vec<usize> = match preset {
                0 => vec![3, 7, 10, 14],
                1 => (0..16).filter(|i| i % 2 == 1).collect(),
                2 => (0..16).filter(|i| ![0, 5, 10, 15].contains(i)).collect(),
                3 => (4..16).collect(),
                other => {
                    return Err(Error::invalid(format!("fixed mask preset {other} out of range")))
                }
            };
            MicMask::new((0..n).map(|i| !missing.contains(&i)).collect())
        }
        MaskSpec::Random { ratio } => {
            if !(*ratio > 0.0 && *ratio < 1.0) {
                return Err(Error::invalid(format!("mask ratio {ratio} must be in (0, 1)")));
            }
            let missing_count = (ratio * n as f64).round() as usize;
            if missing_count >= n {
                return Err(Error::invalid(format!(
                    "mask ratio {ratio} leaves no measured microphone"
                )));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            idx.shuffle(&mut rng);
            let mut flags = vec![true; n];
            for &i in idx.iter().take(missing_count) {
                flags[i] = false;
            }
            MicMask::new(flags)
        }
    }
}

/// Reconstruction backend selection.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Sci,
    Diffusion { model_path: PathBuf },
}

impl Backend {
    pub fn parse(token: &str) -> Result<Self> {
        if token == "sci" {
            return Ok(Backend::Sci);
        }
        if let Some(path) = token.strip_prefix("diffusion:") {
            if path.is_empty() {
                return Err(Error::invalid("diffusion backend needs a model path"));
            }
            return Ok(Backend::Diffusion { model_path: PathBuf::from(path) });
        }
        Err(Error::invalid(format!(
            "unknown backend '{token}' (expected sci or diffusion:<model-path>)"
        )))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Backend::Sci => "sci",
            Backend::Diffusion { .. } => "diffusion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseType {
    Directional,
    Diffuse,
}

impl NoiseType {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "directional" => Ok(Self::Directional),
            "diffuse" => Ok(Self::Diffuse),
            other => Err(Error::invalid(format!("unknown noise type '{other}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Directional => "directional",
            Self::Diffuse => "diffuse",
        }
    }
}

/// Full experiment description. Every field has a default; a configuration
/// file overrides individual keys and the CLI overrides the seed and output
/// directory.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub room_dims: [f64; 3],
    pub t60: f64,
    pub max_reflection_order: usize,
    pub sample_rate: u32,
    pub rir_samples: usize,
    pub scene_duration: f64,
    pub source_wav: Option<PathBuf>,
    pub array_preset: ArrayPreset,
    pub array_spacing: f64,
    pub array_center: [f64; 3],
    pub source_position: [f64; 3],
    pub noise_position: [f64; 3],
    pub ref_mic: usize,
    pub snr_list: Vec<f64>,
    pub white_snr_db: f64,
    pub noise_types: Vec<NoiseType>,
    pub diffuse_waves: usize,
    /// Beamformer operating band; bins outside are muted. The simulator's
    /// responses carry no valid energy below its high-pass, and the array
    /// has no directivity there anyway.
    pub beam_lo_hz: f64,
    pub beam_hi_hz: f64,
    pub masks: Vec<MaskSpec>,
    pub mask_seeds: usize,
    pub backends: Vec<Backend>,
    pub stft: StftConfig,
    pub train_rooms: usize,
    pub train_t60_range: (f64, f64),
    pub train_epochs: usize,
    pub train_batch: usize,
    pub train_lr: f64,
    pub t_steps: usize,
    pub schedule_kind: ScheduleKind,
    pub model_channels: usize,
    pub model_blocks: usize,
    pub time_embed_dim: usize,
    pub mask_conditioning: bool,
    /// Growing per-block dilation in the denoiser (see DenoiserConfig).
    pub dilated: bool,
    pub patch_height: usize,
    pub patch_stride: usize,
    /// Row stride when cutting training patches (denser than the
    /// reconstruction stride to enlarge the training set).
    pub train_stride: usize,
    /// Mirror training patches along the microphone axis.
    pub train_flip_augment: bool,
    pub resample_jumps: usize,
    pub rir_archive: Option<PathBuf>,
    pub input_archive: Option<PathBuf>,
    pub output_archive: Option<PathBuf>,
    pub export_wavs: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            room_dims: [6.0, 5.5, 2.8],
            t60: 0.3,
            max_reflection_order: 60,
            sample_rate: 8000,
            rir_samples: 2048,
            scene_duration: 2.0,
            source_wav: None,
            array_preset: ArrayPreset::Ula16,
            array_spacing: 0.04,
            array_center: [2.5, 2.0, 1.4],
            source_position: [2.5, 4.0, 1.4],
            // Directional interferer 2 m from the array center, 60° off
            // broadside, at array height.
            noise_position: [2.5 + 2.0 * 0.8660254037844386, 2.0 + 2.0 * 0.5, 1.4],
            ref_mic: 0,
            snr_list: vec![0.0],
            white_snr_db: 10.0,
            noise_types: vec![NoiseType::Directional, NoiseType::Diffuse],
            diffuse_waves: DEFAULT_DIFFUSE_WAVES,
            beam_lo_hz: 100.0,
            beam_hi_hz: 3800.0,
            masks: vec![
                MaskSpec::Fixed(0),
                MaskSpec::Fixed(1),
                MaskSpec::Fixed(2),
                MaskSpec::Fixed(3),
            ],
            mask_seeds: 1,
            backends: vec![Backend::Sci],
            stft: StftConfig::default_8khz(),
            train_rooms: 10,
            train_t60_range: (0.2, 0.5),
            train_epochs: 12,
            train_batch: 8,
            train_lr: 2e-3,
            t_steps: 60,
            schedule_kind: ScheduleKind::Cosine,
            model_channels: 16,
            model_blocks: 3,
            time_embed_dim: 32,
            mask_conditioning: true,
            dilated: true,
            patch_height: 64,
            patch_stride: 32,
            train_stride: 16,
            train_flip_augment: true,
            resample_jumps: 1,
            rir_archive: None,
            input_archive: None,
            output_archive: None,
            export_wavs: true,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "seed", "out_dir", "room_lx", "room_ly", "room_lz", "t60", "max_reflection_order",
    "sample_rate", "rir_samples", "scene_duration", "source_wav", "array_preset",
    "array_spacing", "array_center_x", "array_center_y", "array_center_z", "source_x",
    "source_y", "source_z", "noise_x", "noise_y", "noise_z", "ref_mic", "snr_list",
    "white_snr_db", "noise_types", "diffuse_waves", "beam_lo_hz", "beam_hi_hz", "masks",
    "mask_seeds", "backends",
    "stft_frame", "stft_hop", "stft_fft", "train_rooms", "train_t60_min", "train_t60_max",
    "train_epochs", "train_batch", "train_lr", "t_steps", "schedule", "model_channels",
    "model_blocks", "time_embed_dim", "mask_conditioning", "model_dilated", "patch_height", "patch_stride",
    "train_stride", "train_flip_augment", "resample_jumps", "rir_archive", "input_archive",
    "output_archive", "export_wavs",
];

impl ExperimentConfig {
    /// Defaults overridden by the configuration file (when given), then by
    /// the explicit seed/out-dir overrides.
    pub fn load(
        path: Option<&Path>,
        seed_override: Option<u64>,
        out_dir_override: Option<&Path>,
    ) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = path {
            let kv = KvConfig::parse_file(path)?;
            kv.deny_unknown(KNOWN_KEYS)?;
            cfg.apply(&kv)?;
        }
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        if let Some(dir) = out_dir_override {
            cfg.out_dir = dir.to_path_buf();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, kv: &KvConfig) -> Result<()> {
        let cfg_err = |msg: String| Error::Config { line: 0, msg };
        if let Some(v) = kv.get_u64("seed")? {
            self.seed = v;
        }
        if let Some(v) = kv.get_str("out_dir") {
            self.out_dir = PathBuf::from(v);
        }
        for (key, slot) in [("room_lx", 0usize), ("room_ly", 1), ("room_lz", 2)] {
            if let Some(v) = kv.get_f64(key)? {
                self.room_dims[slot] = v;
            }
        }
        if let Some(v) = kv.get_f64("t60")? {
            self.t60 = v;
        }
        if let Some(v) = kv.get_usize("max_reflection_order")? {
            self.max_reflection_order = v;
        }
        if let Some(v) = kv.get_usize("sample_rate")? {
            self.sample_rate = v as u32;
        }
        if let Some(v) = kv.get_usize("rir_samples")? {
            self.rir_samples = v;
        }
        if let Some(v) = kv.get_f64("scene_duration")? {
            self.scene_duration = v;
        }
        if let Some(v) = kv.get_str("source_wav") {
            self.source_wav = Some(PathBuf::from(v));
        }
        if let Some(v) = kv.get_str("array_preset") {
            self.array_preset = ArrayPreset::parse(v)?;
        }
        if let Some(v) = kv.get_f64("array_spacing")? {
            self.array_spacing = v;
        }
        for (key, slot) in [("array_center_x", 0usize), ("array_center_y", 1), ("array_center_z", 2)]
        {
            if let Some(v) = kv.get_f64(key)? {
                self.array_center[slot] = v;
            }
        }
        for (key, slot) in [("source_x", 0usize), ("source_y", 1), ("source_z", 2)] {
            if let Some(v) = kv.get_f64(key)? {
                self.source_position[slot] = v;
            }
        }
        for (key, slot) in [("noise_x", 0usize), ("noise_y", 1), ("noise_z", 2)] {
            if let Some(v) = kv.get_f64(key)? {
                self.noise_position[slot] = v;
            }
        }
        if let Some(v) = kv.get_usize("ref_mic")? {
            self.ref_mic = v;
        }
        if let Some(v) = kv.get_f64_list("snr_list")? {
            if v.is_empty() {
                return Err(cfg_err("snr_list must not be empty".into()));
            }
            self.snr_list = v;
        }
        if let Some(v) = kv.get_f64("white_snr_db")? {
            self.white_snr_db = v;
        }
        if let Some(tokens) = kv.get_list("noise_types") {
            let mut types = Vec::new();
            for t in tokens {
                types.push(NoiseType::parse(&t)?);
            }
            self.noise_types = types;
        }
        if let Some(v) = kv.get_usize("diffuse_waves")? {
            self.diffuse_waves = v;
        }
        if let Some(v) = kv.get_f64("beam_lo_hz")? {
            self.beam_lo_hz = v;
        }
        if let Some(v) = kv.get_f64("beam_hi_hz")? {
            self.beam_hi_hz = v;
        }
        if let Some(tokens) = kv.get_list("masks") {
            let mut masks = Vec::new();
            for t in tokens {
                masks.push(MaskSpec::parse(&t)?);
            }
            self.masks = masks;
        }
        if let Some(v) = kv.get_usize("mask_seeds")? {
            self.mask_seeds = v.max(1);
        }
        if let Some(tokens) = kv.get_list("backends") {
            let mut backends = Vec::new();
            for t in tokens {
                backends.push(Backend::parse(&t)?);
            }
            self.backends = backends;
        }
        let frame = kv.get_usize("stft_frame")?.unwrap_or(self.stft.frame_len);
        let hop = kv.get_usize("stft_hop")?.unwrap_or(self.stft.hop);
        let fft = kv.get_usize("stft_fft")?.unwrap_or(self.stft.fft_size);
        self.stft = StftConfig::new(frame, hop, fft)?;
        if let Some(v) = kv.get_usize("train_rooms")? {
            self.train_rooms = v;
        }
        if let Some(v) = kv.get_f64("train_t60_min")? {
            self.train_t60_range.0 = v;
        }
        if let Some(v) = kv.get_f64("train_t60_max")? {
            self.train_t60_range.1 = v;
        }
        if let Some(v) = kv.get_usize("train_epochs")? {
            self.train_epochs = v;
        }
        if let Some(v) = kv.get_usize("train_batch")? {
            self.train_batch = v;
        }
        if let Some(v) = kv.get_f64("train_lr")? {
            self.train_lr = v;
        }
        if let Some(v) = kv.get_usize("t_steps")? {
            self.t_steps = v;
        }
        if let Some(v) = kv.get_str("schedule") {
            self.schedule_kind = ScheduleKind::parse(v)?;
        }
        if let Some(v) = kv.get_usize("model_channels")? {
            self.model_channels = v;
        }
        if let Some(v) = kv.get_usize("model_blocks")? {
            self.model_blocks = v;
        }
        if let Some(v) = kv.get_usize("time_embed_dim")? {
            self.time_embed_dim = v;
        }
        if let Some(v) = kv.get_bool("mask_conditioning")? {
            self.mask_conditioning = v;
        }
        if let Some(v) = kv.get_bool("model_dilated")? {
            self.dilated = v;
        }
        if let Some(v) = kv.get_usize("patch_height")? {
            self.patch_height = v;
        }
        if let Some(v) = kv.get_usize("patch_stride")? {
            self.patch_stride = v;
        }
        if let Some(v) = kv.get_usize("train_stride")? {
            self.train_stride = v;
        }
        if let Some(v) = kv.get_bool("train_flip_augment")? {
            self.train_flip_augment = v;
        }
        if let Some(v) = kv.get_usize("resample_jumps")? {
            self.resample_jumps = v;
        }
        if let Some(v) = kv.get_str("rir_archive") {
            self.rir_archive = Some(PathBuf::from(v));
        }
        if let Some(v) = kv.get_str("input_archive") {
            self.input_archive = Some(PathBuf::from(v));
        }
        if let Some(v) = kv.get_str("output_archive") {
            self.output_archive = Some(PathBuf::from(v));
        }
        if let Some(v) = kv.get_bool("export_wavs")? {
            self.export_wavs = v;
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Error::Config { line: 0, msg };
        if self.snr_list.is_empty() {
            return Err(cfg_err("snr_list must not be empty".into()));
        }
        if self.masks.is_empty() {
            return Err(cfg_err("masks must not be empty".into()));
        }
        if self.rir_samples == 0 || self.sample_rate == 0 {
            return Err(cfg_err("rir_samples and sample_rate must be positive".into()));
        }
        for b in &self.backends {
            if let Backend::Diffusion { model_path } = b {
                if !model_path.exists() {
                    return Err(cfg_err(format!(
                        "diffusion model file '{}' does not exist",
                        model_path.display()
                    )));
                }
            }
        }
        if self.ref_mic >= self.array_preset.num_mics() {
            return Err(cfg_err("ref_mic out of range for the array preset".into()));
        }
        Ok(())
    }

    /// Microphone layout for the configured preset, plus the target source.
    pub fn geometry(&self) -> Result<ArrayGeometry> {
        let c = self.array_center;
        let d = self.array_spacing;
        let mics: Vec<[f64; 3]> = match self.array_preset {
            ArrayPreset::Ula16 => {
                return ArrayGeometry::ula(16, d, c, [1.0, 0.0, 0.0], self.source_position)
            }
            ArrayPreset::ThreeRows => serpentine_grid(3, 21, d, c),
            ArrayPreset::Frame => {
                // Top edge (21 mics left to right), then down the left edge.
                let half_w = 10.0 * d;
                let mut mics = Vec::with_capacity(41);
                for i in 0..21 {
                    mics.push([c[0] - half_w + i as f64 * d, c[1], c[2]]);
                }
                for j in 1..21 {
                    mics.push([c[0] - half_w, c[1] + j as f64 * d, c[2]]);
                }
                mics
            }
            ArrayPreset::Grid => serpentine_grid(21, 21, d, c),
        };
        ArrayGeometry::new(mics, self.source_position)
    }

    /// One-dimensional interpolation coordinate per microphone: the physical
    /// position along a ULA, or the cumulative path length for the other
    /// layouts (whose column order follows that path).
    pub fn interp_coords(&self, geometry: &ArrayGeometry) -> Vec<f64> {
        match self.array_preset {
            ArrayPreset::Ula16 => {
                (0..geometry.num_mics()).map(|i| i as f64 * self.array_spacing).collect()
            }
            _ => {
                let mut coords = Vec::with_capacity(geometry.num_mics());
                let mut acc = 0.0;
                coords.push(0.0);
                for w in geometry.mic_positions.windows(2) {
                    let dx = w[1][0] - w[0][0];
                    let dy = w[1][1] - w[0][1];
                    let dz = w[1][2] - w[0][2];
                    acc += (dx * dx + dy * dy + dz * dz).sqrt();
                    coords.push(acc);
                }
                coords
            }
        }
    }

    pub fn room(&self) -> RoomSpec {
        let mut room = RoomSpec::new(self.room_dims, Absorption::TargetT60(self.t60));
        room.max_reflection_order = self.max_reflection_order;
        room
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.t_steps, self.schedule_kind)
    }

    pub fn patch_grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.patch_height, 64, self.patch_stride, 64, PadPolicy::Reflect)
    }

    /// Stable textual form of every effective setting, for manifests.
    pub fn canonical_text(&self) -> String {
        let mut lines = vec![
            format!("seed = {}", self.seed),
            format!("room_lx = {}", self.room_dims[0]),
            format!("room_ly = {}", self.room_dims[1]),
            format!("room_lz = {}", self.room_dims[2]),
            format!("t60 = {}", self.t60),
            format!("max_reflection_order = {}", self.max_reflection_order),
            format!("sample_rate = {}", self.sample_rate),
            format!("rir_samples = {}", self.rir_samples),
            format!("scene_duration = {}", self.scene_duration),
            format!("array_preset = {}", self.array_preset.as_str()),
            format!("array_spacing = {}", self.array_spacing),
            format!(
                "array_center = {} {} {}",
                self.array_center[0], self.array_center[1], self.array_center[2]
            ),
            format!(
                "source = {} {} {}",
                self.source_position[0], self.source_position[1], self.source_position[2]
            ),
            format!(
                "noise = {} {} {}",
                self.noise_position[0], self.noise_position[1], self.noise_position[2]
            ),
            format!("ref_mic = {}", self.ref_mic),
            format!(
                "snr_list = {}",
                self.snr_list.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
            ),
            format!("white_snr_db = {}", self.white_snr_db),
            format!(
                "noise_types = {}",
                self.noise_types.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(",")
            ),
            format!("diffuse_waves = {}", self.diffuse_waves),
            format!("beam_band_hz = {} {}", self.beam_lo_hz, self.beam_hi_hz),
            format!(
                "masks = {}",
                self.masks.iter().map(|m| m.label()).collect::<Vec<_>>().join(",")
            ),
            format!("mask_seeds = {}", self.mask_seeds),
            format!(
                "backends = {}",
                self.backends.iter().map(|b| b.label()).collect::<Vec<_>>().join(",")
            ),
            format!(
                "stft = {}/{}/{}",
                self.stft.frame_len, self.stft.hop, self.stft.fft_size
            ),
            format!("t_steps = {}", self.t_steps),
            format!("schedule = {}", self.schedule_kind.as_str()),
            format!("resample_jumps = {}", self.resample_jumps),
        ];
        lines.push(String::new());
        lines.join("\n")
    }
}

fn serpentine_grid(rows: usize, cols: usize, spacing: f64, center: [f64; 3]) -> Vec<[f64; 3]> {
    let half_w = (cols as f64 - 1.0) / 2.0 * spacing;
    let half_h = (rows as f64 - 1.0) / 2.0 * spacing;
    let mut mics = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let y = center[1] - half_h + r as f64 * spacing;
        let xs: Vec<usize> =
            if r % 2 == 0 { (0..cols).collect() } else { (0..cols).rev().collect() };
        for i in xs {
            mics.push([center[0] - half_w + i as f64 * spacing, y, center[2]]);
        }
    }
    mics
}

/// Ground-truth responses: imported from a measured archive when configured,
/// otherwise simulated from the room model.
pub fn ground_truth(cfg: &ExperimentConfig) -> Result<(RirArchive, Vec<String>)> {
    if let Some(path) = &cfg.rir_archive {
        let archive = archive::import_rir_archive(path)?;
        return Ok((archive, Vec::new()));
    }
    let geometry = cfg.geometry()?;
    let sim = simulate_rir(&cfg.room(), &geometry, cfg.rir_samples, cfg.sample_rate)?;
    let archive = RirArchive::new(sim.rirs, geometry.mic_positions, geometry.source_position)?;
    Ok((archive, sim.warnings))
}

/// A backend with its heavyweight state loaded.
pub enum LoadedBackend {
    Sci,
    Diffusion { model: DenoiserModel, schedule: NoiseSchedule },
}

impl LoadedBackend {
    pub fn load(backend: &Backend) -> Result<Self> {
        match backend {
            Backend::Sci => Ok(LoadedBackend::Sci),
            Backend::Diffusion { model_path } => {
                let (model, schedule) = DenoiserModel::load(model_path)?;
                Ok(LoadedBackend::Diffusion { model, schedule })
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LoadedBackend::Sci => "sci",
            LoadedBackend::Diffusion { .. } => "diffusion",
        }
    }

    pub fn reconstruct(
        &self,
        cfg: &ExperimentConfig,
        truth: &RirMatrix,
        mask: &MicMask,
        coords: &[f64],
    ) -> Result<RirMatrix> {
        match self {
            LoadedBackend::Sci => sci_interpolate(truth, mask, coords),
            LoadedBackend::Diffusion { model, schedule } => reconstruct_rir(
                truth,
                mask,
                model,
                schedule,
                &cfg.patch_grid()?,
                cfg.resample_jumps,
                cfg.seed,
            ),
        }
    }
}

/// One reconstruction-quality result row.
#[derive(Debug, Clone)]
pub struct ReconRow {
    pub mask_label: String,
    pub mask_seed: u64,
    pub mask_ratio: f64,
    pub backend: String,
    pub nmse_db: Option<f64>,
    pub cosine_distance: Option<f64>,
    pub dist_sum: Option<f64>,
    pub dist_mean: Option<f64>,
    pub flags: String,
}

/// Reconstruction evaluation: every configured mask × backend, scored with
/// NMSE, cosine distance, and the null-projection distance.
pub fn run_reconstruction_eval(cfg: &ExperimentConfig) -> Result<Vec<ReconRow>> {
    let (gt, _warnings) = ground_truth(cfg)?;
    let geometry = ArrayGeometry::new(gt.mic_positions.clone(), gt.source_position)?;
    let coords = cfg.interp_coords(&geometry);
    let n = gt.rirs.num_mics();
    let fft_size = gt.rirs.num_samples().next_power_of_two();

    let mut backends = Vec::new();
    for b in &cfg.backends {
        backends.push(LoadedBackend::load(b)?);
    }

    let mut rows = Vec::new();
    for spec in &cfg.masks {
        let seeds: Vec<u64> = match spec {
            MaskSpec::Fixed(_) => vec![0],
            MaskSpec::Random { .. } => {
                (0..cfg.mask_seeds as u64).map(|i| cfg.seed.wrapping_add(i * 7919)).collect()
            }
        };
        for (si, &mask_seed) in seeds.iter().enumerate() {
            let mask = make_mask(spec, n, mask_seed)?;
            let ratio = mask.missing_count() as f64 / n as f64;
            if mask.all_true() {
                rows.push(ReconRow {
                    mask_label: spec.label(),
                    mask_seed: si as u64,
                    mask_ratio: 0.0,
                    backend: "-".into(),
                    nmse_db: None,
                    cosine_distance: None,
                    dist_sum: None,
                    dist_mean: None,
                    flags: "no-missing-columns".into(),
                });
                continue;
            }
            for backend in &backends {
                let rec = backend.reconstruct(cfg, &gt.rirs, &mask, &coords)?;
                let nmse = nmse_db(&gt.rirs, &rec, &mask)?;
                let cd = cosine_distance(&gt.rirs, &rec, &mask)?;
                let np = null_projection_dist(&gt.rirs, &rec, fft_size)?;
                let mut flags = String::new();
                if !cd.degenerate_columns.is_empty() {
                    flags = format!("zero-estimate-columns:{}", cd.degenerate_columns.len());
                }
                rows.push(ReconRow {
                    mask_label: spec.label(),
                    mask_seed: si as u64,
                    mask_ratio: ratio,
                    backend: backend.label().into(),
                    nmse_db: Some(nmse),
                    cosine_distance: Some(cd.value),
                    dist_sum: Some(np.dist_sum),
                    dist_mean: Some(np.dist_mean),
                    flags,
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        (&a.mask_label, a.mask_seed, &a.backend).cmp(&(&b.mask_label, b.mask_seed, &b.backend))
    });
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_recon_csv(rows: &[ReconRow], path: &Path) -> Result<()> {
    let mut text =
        String::from("mask,mask_seed,mask_ratio,backend,nmse_db,cosine_distance,dist_sum,dist_mean,flags\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{:.6},{},{},{},{},{},{}\n",
            r.mask_label,
            r.mask_seed,
            r.mask_ratio,
            r.backend,
            fmt_opt(r.nmse_db),
            fmt_opt(r.cosine_distance),
            fmt_opt(r.dist_sum),
            fmt_opt(r.dist_mean),
            r.flags
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Beamformer variants compared in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeamVariant {
    /// Raw reference microphone, no processing.
    Mics,
    /// MVDR with the complete ground-truth responses.
    Full,
    /// MVDR restricted to the measured channels only.
    Missing,
    /// MVDR with measured plus reconstructed responses on all channels.
    Inpainted,
}

impl BeamVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Mics => "mics",
            Self::Full => "full",
            Self::Missing => "missing",
            Self::Inpainted => "inpainted",
        }
    }

    fn order(&self) -> usize {
        match self {
            Self::Mics => 0,
            Self::Full => 1,
            Self::Missing => 2,
            Self::Inpainted => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BeamRow {
    pub noise_type: String,
    pub mask_label: String,
    pub variant: BeamVariant,
    pub sir_db: f64,
    pub si_sdr_db: f64,
}

struct BeamOutcome {
    sir_db: f64,
    si_sdr_db: f64,
    enhanced: Vec<f64>,
}

/// Score one set of weights against a scene by filtering the speech-only,
/// noise-only, and mixture components separately.
fn score_weights(
    weights: &BeamWeights,
    channels: &[usize],
    scene: &SceneSignals,
    dry_source: &[f64],
    cfg: &ExperimentConfig,
) -> Result<BeamOutcome> {
    let take = |m: &Array2<f64>| -> Array2<f64> {
        let mut out = Array2::zeros((channels.len(), m.ncols()));
        for (row, &ch) in channels.iter().enumerate() {
            out.row_mut(row).assign(&m.row(ch));
        }
        out
    };
    let clean = take(&scene.clean);
    let noise = scene.noise_total();
    let noise_sel = take(&noise);
    let mixture = scene.mixture();
    let mixture_sel = take(&mixture);
    let out_len = scene.len();

    let ys = apply_beamformer(weights, &stft_multi(&clean.view(), &cfg.stft), &cfg.stft, out_len)?;
    let yn =
        apply_beamformer(weights, &stft_multi(&noise_sel.view(), &cfg.stft), &cfg.stft, out_len)?;
    let ym = apply_beamformer(
        weights,
        &stft_multi(&mixture_sel.view(), &cfg.stft),
        &cfg.stft,
        out_len,
    )?;

    let speech_in: Vec<f64> = scene.clean.row(cfg.ref_mic).to_vec();
    let noise_in: Vec<f64> = noise.row(cfg.ref_mic).to_vec();
    let sir = sir_improvement_db(&ys, &yn, &speech_in, &noise_in)?;
    let si_sdr = si_sdr_db(dry_source, &ym, cfg.rir_samples)?;
    Ok(BeamOutcome { sir_db: sir, si_sdr_db: si_sdr, enhanced: ym })
}

/// Beamforming evaluation per the experiment config: for each noise type and
/// SNR a scene is rendered and the four beamformer variants are scored; rows
/// are averaged over the SNR list. Enhanced signals are exported as WAV when
/// configured (for external intelligibility scoring).
pub fn run_beamforming_eval(cfg: &ExperimentConfig) -> Result<Vec<BeamRow>> {
    let (gt, _warnings) = ground_truth(cfg)?;
    let geometry = ArrayGeometry::new(gt.mic_positions.clone(), gt.source_position)?;
    let coords = cfg.interp_coords(&geometry);
    let n = gt.rirs.num_mics();
    let t_scene = (cfg.scene_duration * cfg.sample_rate as f64).round() as usize;
    if t_scene < cfg.rir_samples {
        return Err(Error::invalid("scene_duration shorter than the impulse responses"));
    }

    // Source signal: user WAV or a band-limited pink-noise burst.
    let dry_source: Vec<f64> = match &cfg.source_wav {
        Some(path) => {
            let (samples, fs) = crate::roomsim::wav::read_wav_mono(path)?;
            if fs != cfg.sample_rate {
                return Err(Error::invalid(format!(
                    "source WAV is {fs} Hz, experiment runs at {} Hz",
                    cfg.sample_rate
                )));
            }
            samples
        }
        None => generate_bandlimited_pink(
            t_scene,
            cfg.sample_rate,
            cfg.beam_lo_hz,
            cfg.seed.wrapping_add(17),
        )?,
    };
    let scene_len = dry_source.len() + cfg.rir_samples - 1;

    // Reconstructions are scene-independent: compute once per mask.
    let inpaint_backend = LoadedBackend::load(
        cfg.backends.first().ok_or_else(|| Error::invalid("no reconstruction backend"))?,
    )?;
    let mut mask_sets = Vec::new();
    for spec in &cfg.masks {
        let mask = make_mask(spec, n, cfg.seed)?;
        let rec = if mask.all_true() {
            gt.rirs.clone()
        } else {
            inpaint_backend.reconstruct(cfg, &gt.rirs, &mask, &coords)?
        };
        mask_sets.push((spec.label(), mask, rec));
    }

    // Directional interferer responses (same room, noise-source position).
    let noise_rirs = if cfg.noise_types.contains(&NoiseType::Directional) {
        let noise_geom =
            ArrayGeometry::new(gt.mic_positions.clone(), cfg.noise_position)?;
        Some(simulate_rir(&cfg.room(), &noise_geom, cfg.rir_samples, cfg.sample_rate)?.rirs)
    } else {
        None
    };

    let mut steer_full = steering_for_stft_bins(&gt.rirs, &cfg.stft)?;
    steer_full.restrict_band(cfg.beam_lo_hz, cfg.beam_hi_hz);
    let all_channels: Vec<usize> = (0..n).collect();

    let wav_dir = cfg.out_dir.join("wavs");
    if cfg.export_wavs {
        std::fs::create_dir_all(&wav_dir)?;
    }

    let mut sums: std::collections::BTreeMap<(String, String, usize), (f64, f64, usize)> =
        std::collections::BTreeMap::new();
    for (nt_idx, noise_type) in cfg.noise_types.iter().enumerate() {
        let structured = match noise_type {
            NoiseType::Directional => directional_noise(
                noise_rirs.as_ref().expect("directional responses prepared above"),
                scene_len,
                cfg.seed.wrapping_add(23 + nt_idx as u64),
            )?,
            NoiseType::Diffuse => generate_diffuse_noise(
                &geometry,
                scene_len,
                cfg.sample_rate,
                cfg.seed.wrapping_add(29 + nt_idx as u64),
                cfg.diffuse_waves,
            )?,
        };
        for (snr_idx, &snr) in cfg.snr_list.iter().enumerate() {
            let scene = render_scene(
                &gt.rirs,
                &dry_source,
                &structured,
                snr,
                cfg.white_snr_db,
                cfg.ref_mic,
                cfg.seed.wrapping_add(1000 + (nt_idx * 100 + snr_idx) as u64),
            )?;
            let noise_total = scene.noise_total();
            let noise_stfts = stft_multi(&noise_total.view(), &cfg.stft);
            let cov_full = estimate_noise_cov(&noise_stfts, DEFAULT_DIAGONAL_LOADING)?;
            let export_this_snr = cfg.export_wavs && snr_idx == cfg.snr_list.len() / 2;
            if export_this_snr {
                let mixture = scene.mixture();
                crate::roomsim::wav::write_wav_mono_f32(
                    &wav_dir.join(format!("{}_snr{snr_idx}_mixture_ref.wav", noise_type.as_str())),
                    &mixture.row(cfg.ref_mic).to_vec(),
                    cfg.sample_rate,
                )?;
                crate::roomsim::wav::write_wav_mono_f32(
                    &wav_dir.join(format!("{}_snr{snr_idx}_dry_source.wav", noise_type.as_str())),
                    &dry_source,
                    cfg.sample_rate,
                )?;
            }

            for (mask_label, mask, rec) in &mask_sets {
                for variant in
                    [BeamVariant::Mics, BeamVariant::Full, BeamVariant::Missing, BeamVariant::Inpainted]
                {
                    let outcome = match variant {
                        BeamVariant::Mics => {
                            let w = BeamWeights::selector(cfg.stft.bins(), n, cfg.ref_mic);
                            score_weights(&w, &all_channels, &scene, &dry_source, cfg)?
                        }
                        BeamVariant::Full => {
                            let w = mvdr_weights(&steer_full, &cov_full)?;
                            score_weights(&w, &all_channels, &scene, &dry_source, cfg)?
                        }
                        BeamVariant::Missing => {
                            let measured = mask.measured_indices();
                            let sub_rirs = gt.rirs.select_mics(&measured)?;
                            let mut steer = steering_for_stft_bins(&sub_rirs, &cfg.stft)?;
                            steer.restrict_band(cfg.beam_lo_hz, cfg.beam_hi_hz);
                            let sub_stfts: Vec<_> =
                                measured.iter().map(|&ch| noise_stfts[ch].clone()).collect();
                            let cov = estimate_noise_cov(&sub_stfts, DEFAULT_DIAGONAL_LOADING)?;
                            let w = mvdr_weights(&steer, &cov)?;
                            score_weights(&w, &measured, &scene, &dry_source, cfg)?
                        }
                        BeamVariant::Inpainted => {
                            let mut steer = steering_for_stft_bins(rec, &cfg.stft)?;
                            steer.restrict_band(cfg.beam_lo_hz, cfg.beam_hi_hz);
                            let w = mvdr_weights(&steer, &cov_full)?;
                            score_weights(&w, &all_channels, &scene, &dry_source, cfg)?
                        }
                    };
                    if export_this_snr {
                        crate::roomsim::wav::write_wav_mono_f32(
                            &wav_dir.join(format!(
                                "{}_snr{snr_idx}_{}_{}.wav",
                                noise_type.as_str(),
                                mask_label,
                                variant.as_str()
                            )),
                            &outcome.enhanced,
                            cfg.sample_rate,
                        )?;
                    }
                    let key =
                        (noise_type.as_str().to_string(), mask_label.clone(), variant.order());
                    let entry = sums.entry(key).or_insert((0.0, 0.0, 0));
                    entry.0 += outcome.sir_db;
                    entry.1 += outcome.si_sdr_db;
                    entry.2 += 1;
                }
            }
        }
    }

    let variants =
        [BeamVariant::Mics, BeamVariant::Full, BeamVariant::Missing, BeamVariant::Inpainted];
    let mut rows = Vec::new();
    for ((noise_type, mask_label, variant_order), (sir, sdr, count)) in sums {
        rows.push(BeamRow {
            noise_type,
            mask_label,
            variant: variants[variant_order],
            sir_db: sir / count as f64,
            si_sdr_db: sdr / count as f64,
        });
    }
    rows.sort_by(|a, b| {
        (&a.noise_type, &a.mask_label, a.variant.order()).cmp(&(
            &b.noise_type,
            &b.mask_label,
            b.variant.order(),
        ))
    });
    Ok(rows)
}

pub fn write_beamform_csv(rows: &[BeamRow], path: &Path) -> Result<()> {
    let mut text = String::from("noise_type,mask,variant,sir_db,si_sdr_db\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            r.noise_type,
            r.mask_label,
            r.variant.as_str(),
            r.sir_db,
            r.si_sdr_db
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Training data for the denoiser: patches cut from rooms spanning the
/// configured T60 range with randomized geometry, normalized per patch.
pub fn build_training_patches(cfg: &ExperimentConfig) -> Result<Vec<Array2<f64>>> {
    let n = cfg.array_preset.num_mics();
    let mut patches = Vec::new();
    let grid = PatchGrid::new(
        cfg.patch_height,
        64,
        cfg.train_stride.min(cfg.patch_height),
        64,
        PadPolicy::Reflect,
    )?;
    for room_idx in 0..cfg.train_rooms {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(room_idx as u64 * 101));
        let dims = [
            cfg.room_dims[0] * rng.gen_range(0.85..1.15),
            cfg.room_dims[1] * rng.gen_range(0.85..1.15),
            cfg.room_dims[2] * rng.gen_range(0.9..1.1),
        ];
        let t60 = rng.gen_range(cfg.train_t60_range.0..cfg.train_t60_range.1);
        let mut room = RoomSpec::new(dims, Absorption::TargetT60(t60));
        room.max_reflection_order = cfg.max_reflection_order;

        // Rejection-sample a geometry that fits inside the room.
        let aperture = cfg.array_spacing * (n as f64);
        let mut geometry = None;
        for _ in 0..64 {
            let margin = 0.3 + aperture / 2.0;
            if dims[0] <= 2.0 * margin || dims[1] <= 1.5 {
                break;
            }
            let cx = rng.gen_range(margin..dims[0] - margin);
            let cy = rng.gen_range(0.8..(dims[1] - 2.8).max(0.81));
            let cz = rng.gen_range(1.2..1.6f64.min(dims[2] - 0.4));
            let dist = rng.gen_range(1.5..2.5);
            let angle = rng.gen_range(-0.6..0.6f64);
            let sx = cx + dist * angle.sin();
            let sy = cy + dist * angle.cos();
            let sz = cz + rng.gen_range(-0.2..0.2);
            let inside = |x: f64, l: f64| x > 0.15 && x < l - 0.15;
            let source_ok = inside(sx, dims[0]) && inside(sy, dims[1]) && inside(sz, dims[2]);
            let array_ok = inside(cx - aperture / 2.0, dims[0])
                && inside(cx + aperture / 2.0, dims[0])
                && inside(cy, dims[1])
                && inside(cz, dims[2]);
            if source_ok && array_ok {
                let g = match cfg.array_preset {
                    ArrayPreset::Ula16 => ArrayGeometry::ula(
                        n,
                        cfg.array_spacing,
                        [cx, cy, cz],
                        [1.0, 0.0, 0.0],
                        [sx, sy, sz],
                    )?,
                    _ => {
                        let mut c2 = cfg.clone();
                        c2.array_center = [cx, cy, cz];
                        c2.source_position = [sx, sy, sz];
                        c2.geometry()?
                    }
                };
                geometry = Some(g);
                break;
            }
        }
        let geometry = geometry.ok_or_else(|| {
            Error::invalid(format!("could not place the array inside training room {room_idx}"))
        })?;
        let sim = simulate_rir(&room, &geometry, cfg.rir_samples, cfg.sample_rate)?;
        let (tiles, _) = tile_patches(&sim.rirs.data().to_owned(), &grid)?;
        for tile in tiles {
            if cfg.train_flip_augment {
                // A mirrored array is an equally valid wavefield sample.
                let flipped = Array2::from_shape_fn(tile.dim(), |(r, c)| {
                    tile[(r, tile.ncols() - 1 - c)]
                });
                let (normalized, _) = normalize_patch(&flipped);
                patches.push(normalized);
            }
            let (normalized, _) = normalize_patch(&tile);
            patches.push(normalized);
        }
    }
    if patches.is_empty() {
        return Err(Error::invalid("no training patches were produced"));
    }
    Ok(patches)
}

/// Train the configured denoiser on freshly simulated rooms.
pub fn train_model(cfg: &ExperimentConfig) -> Result<(DenoiserModel, NoiseSchedule, TrainReport)> {
    let patches = build_training_patches(cfg)?;
    let schedule = cfg.schedule()?;
    let n = cfg.array_preset.num_mics();
    let model_cfg = DenoiserConfig {
        channels: cfg.model_channels,
        blocks: cfg.model_blocks,
        time_embed_dim: cfg.time_embed_dim,
        mask_conditioning: cfg.mask_conditioning,
        dilated: cfg.dilated,
        patch_height: cfg.patch_height.min(cfg.rir_samples),
        patch_width: 64.min(n),
    };
    let train_cfg = TrainConfig {
        epochs: cfg.train_epochs,
        batch_size: cfg.train_batch,
        learning_rate: cfg.train_lr,
        seed: cfg.seed,
        missing_loss_weight: 3.0,
    };
    let (model, report) = train_denoiser(&patches, &schedule, &model_cfg, &train_cfg)?;
    Ok((model, schedule, report))
}
