use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::{Array2, Axis};
use pulmo_core::evaluation::{evaluate_pair, mix_at_snr};
use pulmo_core::factorization::{modulation_centroid, ClusterAssignment, Role};
use pulmo_core::separation::{pca_scatter, separate, SeparationConfig, SeparationResult};
use pulmo_core::signal_io::{load_audio, Waveform, DEFAULT_SAMPLE_RATE};
use pulmo_core::spectral::{stft, to_lps};
use pulmo_core::synthetic::{generate, SourceKind, SourceSpec};

use crate::config::{self, RunFlags};
use crate::output::{fixed, manifest, Outputs};
use crate::{CliError, EvalArgs, InspectArgs, MixArgs, SeparateArgs, SynthArgs};

fn load(path: &Path) -> Result<Waveform, CliError> {
    Ok(load_audio(path, DEFAULT_SAMPLE_RATE)?)
}

pub fn mix(args: &MixArgs) -> Result<(), CliError> {
    let target = load(&args.target)?;
    let noise = load(&args.noise)?;
    let mixed = mix_at_snr(&target, &noise, args.snr)?;
    let mut out = Outputs::new(&args.out_dir)?;
    out.wav("mix.wav", &mixed.mixture)?;
    out.wav("ref_target.wav", &mixed.target)?;
    out.wav("ref_noise.wav", &mixed.noise)?;
    out.text(
        "manifest.txt",
        &manifest(&[
            ("command", "mix".into()),
            ("target", args.target.display().to_string()),
            ("noise", args.noise.display().to_string()),
            ("snr_db", args.snr.to_string()),
            ("achieved_snr_db", mixed.achieved_snr_db.to_string()),
            ("noise_gain", mixed.noise_gain.to_string()),
            ("rescale", mixed.rescale.to_string()),
            ("samples", mixed.mixture.len().to_string()),
        ]),
    )?;
    out.commit();
    println!("mixed at {:.2} dB into {}", mixed.achieved_snr_db, args.out_dir.display());
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let seed = match args.seed {
        Some(s) => s,
        None => config::env_seed()?,
    };
    let heart = SourceSpec {
        kind: SourceKind::ImpulseTrainTone { carrier_hz: args.carrier, decay_s: args.decay },
        rate_hz: args.heart_rate,
        ..SourceSpec::heart(args.duration, seed)
    };
    let lung = SourceSpec {
        kind: SourceKind::AmNoise { band_lo_hz: args.band_lo, band_hi_hz: args.band_hi },
        rate_hz: args.lung_rate,
        ..SourceSpec::lung(args.duration, seed.wrapping_add(1))
    };
    for spec in [&heart, &lung] {
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let (hw, lw) = (generate(&heart)?, generate(&lung)?);
    let mut out = Outputs::new(&args.out_dir)?;
    out.wav("heart.wav", &hw)?;
    out.wav("lung.wav", &lw)?;
    out.text(
        "manifest.txt",
        &manifest(&[
            ("command", "synth".into()),
            ("duration_s", args.duration.to_string()),
            ("seed", seed.to_string()),
            ("heart_rate_hz", args.heart_rate.to_string()),
            ("heart_carrier_hz", args.carrier.to_string()),
            ("heart_decay_s", args.decay.to_string()),
            ("heart_seed", heart.seed.to_string()),
            ("lung_rate_hz", args.lung_rate.to_string()),
            ("lung_band_lo_hz", args.band_lo.to_string()),
            ("lung_band_hi_hz", args.band_hi.to_string()),
            ("lung_seed", lung.seed.to_string()),
        ]),
    )?;
    out.commit();
    println!("wrote heart.wav and lung.wav to {}", args.out_dir.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut sigs: Vec<Vec<f64>> =
        [&args.est_heart, &args.est_lung, &args.ref_heart, &args.ref_lung].iter().map(|p| load(p).map(Waveform::into_samples)).collect::<Result<_, _>>()?;
    let shortest = sigs.iter().map(Vec::len).min().unwrap_or(0);
    if args.trim_to_shortest {
        sigs.iter_mut().for_each(|s| s.truncate(shortest));
    } else if sigs.iter().any(|s| s.len() != shortest) {
        let lens: Vec<String> = sigs.iter().map(|s| s.len().to_string()).collect();
        return Err(CliError::Runtime(format!("signal lengths differ ({}); pass --trim-to-shortest", lens.join(", "))));
    }
    let ev = evaluate_pair([&sigs[0], &sigs[1]], [&sigs[2], &sigs[3]])?;
    let estimate_for = |source: usize| if (source == 0) != ev.swapped { "est_heart" } else { "est_lung" };
    let header: Vec<String> = ["source", "sdr_db", "sir_db", "sar_db"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = ["heart", "lung"]
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let s = ev.scores[i];
            vec![name.to_string(), s.sdr.to_string(), s.sir.to_string(), s.sar.to_string()]
        })
        .collect();
    let mut report = vec![("command", "eval".to_string()), ("swapped", ev.swapped.to_string())];
    report.push(("heart_estimate", estimate_for(0).to_string()));
    report.push(("lung_estimate", estimate_for(1).to_string()));
    report.push(("samples", shortest.to_string()));
    for (keys, s) in [["heart_sdr_db", "heart_sir_db", "heart_sar_db"], ["lung_sdr_db", "lung_sir_db", "lung_sar_db"]].iter().zip(ev.scores) {
        report.extend(keys.iter().zip([s.sdr, s.sir, s.sar]).map(|(k, v)| (*k, v.to_string())));
    }
    let mut out = Outputs::new(&args.out_dir)?;
    out.csv("scores.csv", &header, rows)?;
    out.text("report.txt", &manifest(&report))?;
    out.commit();
    for (i, name) in ["heart", "lung"].iter().enumerate() {
        let s = ev.scores[i];
        println!("{name}: SDR {} dB  SIR {} dB  SAR {} dB", fixed(s.sdr, 2), fixed(s.sir, 2), fixed(s.sar, 2));
    }
    Ok(())
}

pub fn separate_cmd(args: &SeparateArgs) -> Result<(), CliError> {
    let cfg = args.run.resolve()?;
    if args.inputs.len() == 1 {
        return separate_one(&args.inputs[0], &args.out_dir, &cfg, &args.run, args.dump);
    }
    let mut stems: Vec<String> = args.inputs.iter().map(|p| p.file_stem().map_or("input".into(), |s| s.to_string_lossy().into_owned())).collect();
    stems.sort();
    if stems.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Usage("input file names must be distinct when separating several files".into()));
    }
    let next = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    let jobs = args.jobs.clamp(1, args.inputs.len());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(input) = args.inputs.get(i) else { break };
                let stem = input.file_stem().map_or("input".into(), |s| s.to_string_lossy().into_owned());
                if let Err(e) = separate_one(input, &args.out_dir.join(&stem), &cfg, &args.run, args.dump) {
                    failures.lock().expect("no poisoned lock").push(format!("{}: {e}", input.display()));
                }
            });
        }
    });
    let failures = failures.into_inner().expect("no poisoned lock");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(failures.join("; ")))
    }
}

fn separate_one(input: &Path, out_dir: &Path, cfg: &SeparationConfig, run: &RunFlags, dump: bool) -> Result<(), CliError> {
    let wave = load(input)?;
    let result = separate(&wave, cfg)?;
    let mut out = Outputs::new(out_dir)?;
    out.wav("heart.wav", &result.heart)?;
    out.wav("lung.wav", &result.lung)?;
    write_result_csv(&mut out, &result, cfg)?;
    out.text("manifest.txt", &run_manifest("separate", input, &wave, cfg, run))?;
    if dump {
        dump_latents(&mut out, &result)?;
        dump_spectra(&mut out, &wave, &result, cfg)?;
    }
    out.commit();
    println!("{}: {} heart / {} lung units -> {}", input.display(), result.assignment.role_count(Role::Heart), result.assignment.role_count(Role::Lung), out_dir.display());
    Ok(())
}

pub fn inspect(args: &InspectArgs) -> Result<(), CliError> {
    let cfg = args.run.resolve()?;
    let wave = load(&args.input)?;
    let result = separate(&wave, &cfg)?;
    let mut out = Outputs::new(&args.out_dir)?;
    dump_latents(&mut out, &result)?;

    let informative: Vec<usize> = (0..result.assignment.len()).filter(|&j| result.assignment.role(j) != Role::Shared).collect();
    let coords = pca_scatter(result.trajectories.select(Axis(0), &informative).view())?;
    let header: Vec<String> = ["unit", "coord1", "coord2", "label"].map(String::from).to_vec();
    let rows = informative.iter().zip(coords.rows()).map(|(&j, c)| vec![j.to_string(), c[0].to_string(), c[1].to_string(), result.assignment.role(j).to_string()]);
    out.csv("pca.csv", &header, rows)?;

    let mixture = to_lps(&stft(&wave, cfg.frame_len, cfg.hop)?, cfg.band_bins)?.band_magnitude();
    out.spectrogram_pgm("mixture.pgm", &mixture)?;
    write_result_csv(&mut out, &result, &cfg)?;
    out.text("manifest.txt", &run_manifest("inspect", &args.input, &wave, &cfg, &args.run))?;
    out.commit();
    println!("{} latent units, {} informative -> {}", result.assignment.len(), informative.len(), args.out_dir.display());
    Ok(())
}

fn run_manifest(command: &str, input: &Path, wave: &Waveform, cfg: &SeparationConfig, run: &RunFlags) -> String {
    let mut text = manifest(&[
        ("command", command.into()),
        ("input", input.display().to_string()),
        ("samples", wave.len().to_string()),
        ("sample_rate", wave.sample_rate().to_string()),
        ("config_file", run.config.as_ref().map_or("none".into(), |p: &PathBuf| p.display().to_string())),
    ]);
    text.push_str(&config::render(cfg));
    text
}

fn role_centroid(a: &ClusterAssignment, role: Role) -> f64 {
    a.heart_cluster
        .map(|h| if role == Role::Heart { h } else { 1 - h })
        .and_then(|c| a.centroid_freq.get(c).copied())
        .unwrap_or(f64::NAN)
}

fn write_result_csv(out: &mut Outputs, r: &SeparationResult, cfg: &SeparationConfig) -> Result<(), CliError> {
    let a = &r.assignment;
    let header: Vec<String> =
        ["method", "seed", "mask_mode", "heart_units", "lung_units", "shared_units", "heart_centroid_hz", "lung_centroid_hz"].map(String::from).to_vec();
    let row = vec![
        r.method.to_string(),
        cfg.seed.to_string(),
        r.mask_mode.to_string(),
        a.role_count(Role::Heart).to_string(),
        a.role_count(Role::Lung).to_string(),
        a.role_count(Role::Shared).to_string(),
        role_centroid(a, Role::Heart).to_string(),
        role_centroid(a, Role::Lung).to_string(),
    ];
    out.csv("result.csv", &header, [row])
}

/// Trajectories, modulation spectra and labels, one column or row per unit.
fn dump_latents(out: &mut Outputs, r: &SeparationResult) -> Result<(), CliError> {
    let frames = r.trajectories.ncols();
    let frame_rate = r.code.freq_axis.get(1).map_or(0.0, |df| df * frames as f64);
    let times: Vec<f64> = (0..frames).map(|n| n as f64 / frame_rate).collect();
    out.matrix_csv("trajectories.csv", "time_s", &times, "unit", r.trajectories.t())?;
    out.matrix_csv("mfa.csv", "hz", &r.code.freq_axis, "unit", r.code.values.t())?;
    let header: Vec<String> = ["neuron_index", "label", "centroid_hz"].map(String::from).to_vec();
    let rows = r.code.values.rows().into_iter().enumerate().map(|(j, p)| {
        let centroid = modulation_centroid(p.as_slice().expect("standard layout"), &r.code.freq_axis);
        vec![j.to_string(), r.assignment.role(j).to_string(), centroid.to_string()]
    });
    out.csv("labels.csv", &header, rows)
}

/// Masks and dB spectrograms of the mixture and both outputs.
fn dump_spectra(out: &mut Outputs, wave: &Waveform, r: &SeparationResult, cfg: &SeparationConfig) -> Result<(), CliError> {
    let band = |w: &Waveform| -> Result<Array2<f64>, CliError> { Ok(to_lps(&stft(w, cfg.frame_len, cfg.hop)?, cfg.band_bins)?.band_magnitude()) };
    let mixture = band(wave)?;
    out.spectrogram_pgm("mixture.pgm", &mixture)?;
    out.spectrogram_pgm("heart.pgm", &band(&r.heart)?)?;
    out.spectrogram_pgm("lung.pgm", &band(&r.lung)?)?;
    if let Some((mh, ml)) = &r.masks {
        let times: Vec<f64> = (0..mh.nrows()).map(|n| (n * cfg.hop) as f64 / wave.sample_rate() as f64).collect();
        out.matrix_csv("heart_mask.csv", "time_s", &times, "bin", mh.view())?;
        out.matrix_csv("lung_mask.csv", "time_s", &times, "bin", ml.view())?;
        out.pgm("heart_mask.pgm", mh.view(), 0.0, 1.0)?;
        out.pgm("lung_mask.pgm", ml.view(), 0.0, 1.0)?;
    }
    Ok(())
}
