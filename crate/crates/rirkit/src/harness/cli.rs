//! Command-line interface: simulate, train, reconstruct, evaluate, report.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 1 on
//! runtime failures.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::archive::{export_rir_archive, import_rir_archive, RirArchive};
use crate::harness::{
    ground_truth, make_mask, run_beamforming_eval, run_reconstruction_eval, write_beamform_csv,
    write_recon_csv, Backend, ExperimentConfig, LoadedBackend,
};

#[derive(Parser)]
#[command(
    name = "rirkit",
    version,
    about = "Impulse-response interpolation, diffusion inpainting, and MVDR beamforming experiments"
)]
struct Cli {
    /// Experiment configuration file (flat key = value lines).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ground-truth impulse responses and write them as an archive.
    Simulate,
    /// Train the diffusion denoiser on simulated rooms and save the model.
    Train,
    /// Reconstruct missing channels of an archive under the configured mask.
    Reconstruct {
        /// Input archive (overrides the config's input_archive).
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        /// Output archive path (overrides the config's output_archive).
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
        /// Backend: `sci` or `diffusion:<model-path>`.
        #[arg(long, value_name = "BACKEND")]
        backend: Option<String>,
    },
    /// Score reconstruction quality for every configured mask and backend.
    EvalRecon,
    /// Score the MVDR beamformer variants on rendered noisy scenes.
    EvalBeamform,
    /// Merge evaluation CSVs in the output directory into plot-ready data.
    Report,
}

/// Entry point used by `main` and by tests. Returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { 2 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e @ Error::Config { .. }) => {
            eprintln!("configuration error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = ExperimentConfig::load(
        cli.config.as_deref(),
        cli.seed,
        cli.out_dir.as_deref(),
    )?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    match &cli.command {
        Command::Simulate => simulate(&cfg),
        Command::Train => train(&cfg),
        Command::Reconstruct { input, output, backend } => {
            reconstruct(&cfg, input.as_deref(), output.as_deref(), backend.as_deref())
        }
        Command::EvalRecon => eval_recon(&cfg),
        Command::EvalBeamform => eval_beamform(&cfg),
        Command::Report => report(&cfg),
    }
}

fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    let (archive, warnings) = ground_truth(cfg)?;
    let archive_path = cfg.out_dir.join("ground_truth.rka");
    export_rir_archive(&archive_path, &archive)?;
    let mut manifest = String::new();
    manifest.push_str("# effective configuration\n");
    manifest.push_str(&cfg.canonical_text());
    manifest.push_str("\n# outputs\n");
    manifest.push_str("ground_truth.rka\n");
    if !warnings.is_empty() {
        manifest.push_str("\n# warnings\n");
        for w in &warnings {
            manifest.push_str(w);
            manifest.push('\n');
        }
    }
    std::fs::write(cfg.out_dir.join("manifest.txt"), manifest)?;
    println!("wrote {}", archive_path.display());
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let (model, schedule, report) = crate::harness::train_model(cfg)?;
    let model_path = cfg.out_dir.join("model.rkm");
    model.save(&model_path, &schedule)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{},{:.8}\n", i + 1, loss));
    }
    std::fs::write(cfg.out_dir.join("training_loss.csv"), csv)?;
    println!(
        "trained {} parameters for {} epochs, final loss {:.6}; wrote {}",
        model.num_parameters(),
        report.epoch_losses.len(),
        report.epoch_losses.last().unwrap_or(&f64::NAN),
        model_path.display()
    );
    Ok(())
}

fn reconstruct(
    cfg: &ExperimentConfig,
    input: Option<&Path>,
    output: Option<&Path>,
    backend: Option<&str>,
) -> Result<()> {
    let input_path = input
        .map(Path::to_path_buf)
        .or_else(|| cfg.input_archive.clone())
        .ok_or_else(|| Error::Config {
            line: 0,
            msg: "reconstruct needs --input or the input_archive key".into(),
        })?;
    let archive = import_rir_archive(&input_path)?;
    let n = archive.rirs.num_mics();
    let mask_spec = cfg.masks.first().expect("validated non-empty");
    let mask = make_mask(mask_spec, n, cfg.seed)?;
    let backend = match backend {
        Some(token) => Backend::parse(token)?,
        None => cfg.backends.first().cloned().unwrap_or(Backend::Sci),
    };
    let loaded = LoadedBackend::load(&backend)?;
    let geometry = crate::roomsim::ArrayGeometry::new(
        archive.mic_positions.clone(),
        archive.source_position,
    )?;
    let coords = cfg.interp_coords(&geometry);
    let rec = loaded.reconstruct(cfg, &archive.rirs, &mask, &coords)?;
    let out_path = output
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_archive.clone())
        .unwrap_or_else(|| cfg.out_dir.join("reconstructed.rka"));
    export_rir_archive(
        &out_path,
        &RirArchive::new(rec, archive.mic_positions.clone(), archive.source_position)?,
    )?;
    println!(
        "reconstructed {} missing of {} channels with {}; wrote {}",
        mask.missing_count(),
        n,
        loaded.label(),
        out_path.display()
    );
    Ok(())
}

fn eval_recon(cfg: &ExperimentConfig) -> Result<()> {
    let rows = run_reconstruction_eval(cfg)?;
    let path = cfg.out_dir.join("recon_metrics.csv");
    write_recon_csv(&rows, &path)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn eval_beamform(cfg: &ExperimentConfig) -> Result<()> {
    let rows = run_beamforming_eval(cfg)?;
    let path = cfg.out_dir.join("beamform_metrics.csv");
    write_beamform_csv(&rows, &path)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn report(cfg: &ExperimentConfig) -> Result<()> {
    let recon_path = cfg.out_dir.join("recon_metrics.csv");
    let beam_path = cfg.out_dir.join("beamform_metrics.csv");
    let mut out = String::from("figure,series,x,value\n");
    let mut found = false;
    if recon_path.exists() {
        found = true;
        for row in read_csv_rows(&recon_path)? {
            // mask,mask_seed,mask_ratio,backend,nmse_db,cosine_distance,dist_sum,dist_mean,flags
            if row.len() < 8 || row[3] == "-" {
                continue;
            }
            let backend = &row[3];
            if !row[4].is_empty() {
                out.push_str(&format!("nmse_vs_ratio,{},{},{}\n", backend, row[2], row[4]));
            }
            if !row[5].is_empty() {
                out.push_str(&format!("cd_vs_ratio,{},{},{}\n", backend, row[2], row[5]));
            }
            if !row[6].is_empty() {
                out.push_str(&format!("dist_by_mask,{},{},{}\n", backend, row[0], row[6]));
            }
        }
    }
    if beam_path.exists() {
        found = true;
        for row in read_csv_rows(&beam_path)? {
            // noise_type,mask,variant,sir_db,si_sdr_db
            if row.len() < 5 {
                continue;
            }
            out.push_str(&format!(
                "sir_by_mask,{}/{},{},{}\n",
                row[2], row[0], row[1], row[3]
            ));
            out.push_str(&format!(
                "sisdr_by_mask,{}/{},{},{}\n",
                row[2], row[0], row[1], row[4]
            ));
        }
    }
    if !found {
        return Err(Error::invalid(format!(
            "no evaluation CSVs found in {}",
            cfg.out_dir.display()
        )));
    }
    let path = cfg.out_dir.join("plotdata.csv");
    std::fs::write(&path, out)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect())
}
