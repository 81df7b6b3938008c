use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::json;
use sparseflow::costsim::{
    cost_csv, simulate_timeline, timeline_csv, write_cost_json, CostLedger, CostParams,
};
use sparseflow::dfengine::{
    frames_to_tensors, run_network, write_activation_log, EngineConfig, Scheme,
    DEFAULT_MEMORY_BUDGET, LARGE_MEMORY_BUDGET,
};
use sparseflow::evio::{
    build_frames, downsample, read_spikes, write_spikes, CameraSpike, EventFrame, FlowGroundTruth, FrameMode,
};
use sparseflow::experiments::controlled::{affine_fit_residual, controlled_sweep, sweep_csv, SweepPoint};
use sparseflow::experiments::fixtures::{density_fixture, fixture_ledger};
use sparseflow::experiments::{self_test as run_self_test, SelfTestOptions};
use sparseflow::metrics::{
    aee, density_csv, density_map_pgm, density_report, flow_color_ppm, sequence_aee, DEFAULT_OUTLIER_PX,
};
use sparseflow::netspec::{firenet, load_network, save_network, FireNetShape, NetworkKind};
use sparseflow::sparsetrain::{self, train_log_csv, translating_task, TaskConfig, TrainConfig};
use sparseflow::tensorcore::Tensor;

use crate::config::{config_hash, file_digest, header, Resolution};
use crate::{config_err, runtime_err, CommonArgs, Failure, GenArgs, InferArgs, SelfTestArgs, TrainArgs};

type Res = Result<(), Failure>;

/// Spike window used for generated spike files.
const FIXTURE_WINDOW_US: u64 = 10_000;

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(config_err)
}

fn write(dir: &Path, name: &str, body: impl AsRef<[u8]>) -> Result<(), Failure> {
    let p = dir.join(name);
    fs::write(&p, body)
        .with_context(|| format!("writing {}", p.display()))
        .map_err(runtime_err)
}

fn load_profile(c: &CommonArgs) -> Result<(CostParams, Option<String>), Failure> {
    match &c.profile {
        None => {
            if c.profile_name != "default" {
                return Err(config_err(anyhow!(
                    "profile {:?} requested without --profile",
                    c.profile_name
                )));
            }
            Ok((CostParams::default_profile(), None))
        }
        Some(p) => {
            let params = CostParams::load(p, &c.profile_name)
                .with_context(|| format!("loading profile {}", p.display()))
                .map_err(config_err)?;
            let digest = file_digest(p).map_err(config_err)?;
            Ok((params, Some(digest)))
        }
    }
}

fn digest(path: &Path) -> Result<String, Failure> {
    file_digest(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(config_err)
}

/// Insert a comment line after the magic number of a binary PNM image.
fn with_comment(img: Vec<u8>, comment: &str) -> Vec<u8> {
    let mut out = img[..3].to_vec();
    out.extend_from_slice(comment.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&img[3..]);
    out
}

fn flow_csv(flows: &[Tensor], hdr: &str) -> String {
    let mut s = format!("{hdr}\nframe,y,x,u,v\n");
    for (f, t) in flows.iter().enumerate() {
        for y in 0..t.height() {
            for x in 0..t.width() {
                let _ = writeln!(s, "{f},{y},{x},{},{}", t.get(y, x, 0).to_f32(), t.get(y, x, 1).to_f32());
            }
        }
    }
    s
}

fn write_ledger(dir: &Path, stem: &str, ledger: &CostLedger, hdr: &str) -> Res {
    write(dir, &format!("{stem}.csv"), cost_csv(ledger, Some(hdr)))?;
    write(dir, &format!("{stem}_timeline.csv"), timeline_csv(ledger, Some(hdr)))?;
    write_cost_json(ledger, Some(hdr), dir.join(format!("{stem}.json"))).map_err(runtime_err)
}

/// `n` windows of `dt` from time zero.
fn fixed_windows(spikes: &[CameraSpike], sensor: Resolution, dt: u64, n: usize) -> Result<Vec<EventFrame>, Failure> {
    if dt == 0 {
        return Err(config_err(anyhow!("window length must be > 0")));
    }
    let end = dt.saturating_mul(n as u64);
    let kept: Vec<CameraSpike> = spikes.iter().filter(|s| s.t < end).copied().collect();
    let mut frames = build_frames(&kept, sensor.height, sensor.width, FrameMode::Window(dt)).map_err(config_err)?;
    let first = kept.first().map_or(n as u64, |s| s.t / dt) as usize;
    let mut out: Vec<EventFrame> = (0..first.min(n))
        .map(|k| EventFrame::empty(sensor.height, sensor.width, k as u64 * dt, (k as u64 + 1) * dt))
        .collect();
    out.append(&mut frames);
    while out.len() < n {
        let k = out.len() as u64;
        out.push(EventFrame::empty(sensor.height, sensor.width, k * dt, (k + 1) * dt));
    }
    Ok(out)
}

#[derive(Serialize)]
struct InferConfig<'a> {
    command: &'static str,
    net_sha256: String,
    events_sha256: String,
    gt_sha256: Option<String>,
    profile_sha256: Option<String>,
    profile_name: &'a str,
    scheme: Scheme,
    resolution: Resolution,
    sensor: Resolution,
    window_us: Option<u64>,
    frame_spikes: Option<usize>,
    frames: Option<usize>,
    threads: bool,
    memory_budget: usize,
    images: bool,
    log_activations: bool,
    seed: u64,
}

pub fn infer(a: &InferArgs) -> Res {
    let c = &a.common;
    let net = load_network(&a.net)
        .with_context(|| format!("loading network {}", a.net.display()))
        .map_err(config_err)?;
    let spikes = read_spikes(&a.events)
        .with_context(|| format!("reading spikes {}", a.events.display()))
        .map_err(config_err)?;
    let gt = match &a.gt {
        Some(p) => Some(
            FlowGroundTruth::read(p)
                .with_context(|| format!("reading ground truth {}", p.display()))
                .map_err(config_err)?,
        ),
        None => None,
    };
    let (params, profile_sha256) = load_profile(c)?;
    let res = a.resolution.unwrap_or(Resolution {
        height: net.input_height,
        width: net.input_width,
    });
    let sensor = a.sensor.unwrap_or(res);
    let factor = (sensor.height / res.height).min(sensor.width / res.width);
    if factor == 0 {
        return Err(config_err(anyhow!("sensor {sensor} is smaller than the input {res}")));
    }
    if let Some(g) = &gt {
        if (g.height, g.width) != (res.height, res.width) {
            return Err(config_err(anyhow!(
                "ground truth is {}x{} but the input resolution is {res}",
                g.height,
                g.width
            )));
        }
    }
    if let Some(s) = spikes
        .iter()
        .find(|s| s.y as usize >= sensor.height || s.x as usize >= sensor.width || s.p > 1)
    {
        return Err(config_err(anyhow!("spike {s:?} lies outside the {sensor} sensor")));
    }
    let cfg = InferConfig {
        command: "infer",
        net_sha256: digest(&a.net)?,
        events_sha256: digest(&a.events)?,
        gt_sha256: a.gt.as_deref().map(digest).transpose()?,
        profile_sha256,
        profile_name: &c.profile_name,
        scheme: a.scheme.into(),
        resolution: res,
        sensor,
        window_us: a.frame_spikes.is_none().then_some(a.window_us),
        frame_spikes: a.frame_spikes,
        frames: a.frames,
        threads: a.threads,
        memory_budget: if a.large_memory { LARGE_MEMORY_BUDGET } else { DEFAULT_MEMORY_BUDGET },
        images: a.images,
        log_activations: a.log_activations,
        seed: c.seed,
    };
    let hash = config_hash(&cfg);
    let hdr = header("infer", &hash);
    prepare_out(&c.out)?;

    let mode = match a.frame_spikes {
        Some(n) => FrameMode::Count(n),
        None => FrameMode::Window(a.window_us),
    };
    let frames = match a.frames {
        Some(n) => fixed_windows(&spikes, sensor, a.window_us, n)?,
        None => build_frames(&spikes, sensor.height, sensor.width, mode).map_err(config_err)?,
    };
    let frames = if sensor == res {
        frames
    } else {
        frames
            .iter()
            .map(|f| downsample(f, res.height * factor, res.width * factor, factor))
            .collect::<Result<Vec<_>, _>>()
            .map_err(config_err)?
    };
    let inputs = frames_to_tensors(&frames);
    let engine = EngineConfig {
        scheme: cfg.scheme,
        threaded: a.threads,
        capture_layers: true,
        log_activations: a.log_activations,
        memory_budget: cfg.memory_budget,
        prescribed: None,
    };
    let out = run_network(&inputs, &net, &engine).map_err(runtime_err)?;
    let ledger = simulate_timeline(&out.traces, &params).map_err(runtime_err)?;
    let report = density_report(&net, &inputs, &out.layers).map_err(runtime_err)?;

    write(&c.out, "flow.csv", flow_csv(&out.flow, &hdr))?;
    write(&c.out, "density.csv", density_csv(&report, Some(&hdr)))?;
    write_ledger(&c.out, "cost", &ledger, &hdr)?;
    if let Some(g) = &gt {
        let mut s = format!("{hdr}\nframe,aee,outlier_pct,pixels\n");
        let per: Vec<_> = out
            .flow
            .iter()
            .zip(&frames)
            .map(|(p, f)| aee(p, g, &f.active_mask(), DEFAULT_OUTLIER_PX))
            .collect();
        for (i, r) in per.iter().enumerate() {
            match r {
                Ok(e) => {
                    let _ = writeln!(s, "{i},{:.6},{:.4},{}", e.aee, e.outlier_pct, e.pixels);
                }
                Err(_) => {
                    let _ = writeln!(s, "{i},no valid pixels,,0");
                }
            }
        }
        if let Some(m) = sequence_aee(&per) {
            let _ = writeln!(s, "mean,{:.6},{:.4},{}", m.aee, m.outlier_pct, m.pixels);
        }
        write(&c.out, "aee.csv", s)?;
    }
    if a.images {
        let comment = format!("# config_sha256={hash}");
        for (f, layers) in out.layers.iter().enumerate() {
            for (l, t) in layers.iter().enumerate() {
                let img = with_comment(density_map_pgm(t), &comment);
                write(&c.out, &format!("density_f{f}_l{l}.pgm"), img)?;
            }
            let img = flow_color_ppm(&out.flow[f]).map_err(runtime_err)?;
            write(&c.out, &format!("flow_f{f}.ppm"), with_comment(img, &comment))?;
        }
    }
    if a.log_activations {
        write_activation_log(&out.activations, Some(&hdr), c.out.join("activations.csv"))
            .map_err(runtime_err)?;
    }
    let summary = json!({
        "header": hdr,
        "config": cfg,
        "frames": inputs.len(),
        "memory_bytes": out.memory,
        "mean_latency_us": ledger.mean_latency_us,
        "mean_energy_uj": ledger.mean_energy_uj,
        "mean_neuron_density": report.mean_neuron_density,
        "mean_pixel_density": report.mean_pixel_density,
    });
    write(&c.out, "run.json", serde_json::to_string_pretty(&summary).map_err(runtime_err)? + "\n")?;
    println!(
        "{} frames, mean latency {:.3} us, mean energy {:.4} uJ, neuron density {:.4}",
        inputs.len(),
        ledger.mean_latency_us,
        ledger.mean_energy_uj,
        report.mean_neuron_density
    );
    Ok(())
}

#[derive(Serialize)]
struct SimpleConfig<'a> {
    command: &'static str,
    profile_sha256: Option<String>,
    profile_name: &'a str,
    seed: u64,
}

fn simple_config<'a>(command: &'static str, c: &'a CommonArgs) -> Result<(CostParams, SimpleConfig<'a>), Failure> {
    let (params, profile_sha256) = load_profile(c)?;
    Ok((
        params,
        SimpleConfig {
            command,
            profile_sha256,
            profile_name: &c.profile_name,
            seed: c.seed,
        },
    ))
}

pub fn controlled(c: &CommonArgs) -> Res {
    let (params, cfg) = simple_config("controlled", c)?;
    let hdr = header("controlled", &config_hash(&cfg));
    prepare_out(&c.out)?;
    let mut all: Vec<SweepPoint> = Vec::new();
    let mut fit = format!("{hdr}\nkind,base_us,slope_us_per_pixel,max_residual_frac,inc_1_to_4_us,inc_4_to_6_us\n");
    for kind in [NetworkKind::Ann, NetworkKind::Snn] {
        let pts = controlled_sweep(kind, &params, c.seed).map_err(runtime_err)?;
        let xy: Vec<(f64, f64)> = pts[..5].iter().map(|q| (q.pixels as f64, q.time_us)).collect();
        let (b, s, r) = affine_fit_residual(&xy);
        let t = |n| pts[5..].iter().find(|q| q.per_pixel == n).map_or(f64::NAN, |q| q.time_us);
        let name = if kind == NetworkKind::Ann { "ann" } else { "snn" };
        let _ = writeln!(fit, "{name},{b:.6},{s:.6},{r:.6},{:.6},{:.6}", t(4) - t(1), t(6) - t(4));
        println!(
            "{name}: {s:.3} us per active pixel, fit residual {:.3}% of range",
            r * 100.0
        );
        all.extend(pts);
    }
    write(&c.out, "controlled.csv", sweep_csv(&all, Some(&hdr)))?;
    write(&c.out, "controlled_fit.csv", fit)
}

pub fn fixture_cost(c: &CommonArgs) -> Res {
    let (params, cfg) = simple_config("fixture-cost", c)?;
    let hdr = header("fixture-cost", &config_hash(&cfg));
    prepare_out(&c.out)?;
    let mut s = format!("{hdr}\nkind,mean_latency_us,mean_total_time_us,mean_energy_uj\n");
    for kind in [NetworkKind::Ann, NetworkKind::Snn] {
        let fx = density_fixture(kind, c.seed).map_err(runtime_err)?;
        let ledger = fixture_ledger(&fx, Scheme::Bitmask, &params, false).map_err(runtime_err)?;
        let name = if kind == NetworkKind::Ann { "ann" } else { "snn" };
        let _ = writeln!(
            s,
            "{name},{:.6},{:.6},{:.6}",
            ledger.mean_latency_us, ledger.mean_total_time_us, ledger.mean_energy_uj
        );
        println!(
            "{name}: latency {:.1} us, total {:.1} us, energy {:.3} uJ",
            ledger.mean_latency_us, ledger.mean_total_time_us, ledger.mean_energy_uj
        );
        write_ledger(&c.out, &format!("cost_{name}"), &ledger, &hdr)?;
    }
    write(&c.out, "fixture_cost.csv", s)
}

#[derive(Serialize)]
struct TrainCmdConfig {
    command: &'static str,
    kind: NetworkKind,
    channels: usize,
    task: TaskConfig,
    train: Vec<TrainConfig>,
}

fn train_configs(a: &TrainArgs) -> Vec<TrainConfig> {
    a.lambda_s
        .iter()
        .map(|&lambda_s| TrainConfig {
            lambda_s,
            lambda_i: a.lambda_i.clone(),
            lr_max: a.lr,
            epochs: a.epochs,
            surrogate_width: a.surrogate_width,
            bptt: a.bptt,
            seed: a.common.seed,
            ..TrainConfig::default()
        })
        .collect()
}

pub fn train(a: &TrainArgs) -> Res {
    let c = &a.common;
    if a.lambda_s.is_empty() {
        return Err(config_err(anyhow!("at least one --lambda-s value is required")));
    }
    let kind: NetworkKind = a.kind.into();
    let task = TaskConfig {
        height: a.resolution.height,
        width: a.resolution.width,
        frames: a.frames,
        samples: a.samples,
        seed: c.seed,
        ..TaskConfig::default()
    };
    let cfg = TrainCmdConfig {
        command: "train",
        kind,
        channels: a.channels,
        task,
        train: train_configs(a),
    };
    let shape = FireNetShape {
        kind,
        channels: a.channels,
        height: a.resolution.height,
        width: a.resolution.width,
    };
    if a.resolution.height.max(a.resolution.width) > sparsetrain::MAX_TRAIN_SIZE
        || a.channels > sparsetrain::MAX_TRAIN_CHANNELS
    {
        return Err(config_err(anyhow!(
            "training is limited to {0}x{0} inputs and {1} channels",
            sparsetrain::MAX_TRAIN_SIZE,
            sparsetrain::MAX_TRAIN_CHANNELS
        )));
    }
    let net = firenet(shape, c.seed).map_err(config_err)?;
    for t in &cfg.train {
        t.validate(net.layers.len() - 1).map_err(config_err)?;
    }
    let data = translating_task(&cfg.task).map_err(config_err)?;
    let hash = config_hash(&cfg);
    let hdr = header("train", &hash);
    prepare_out(&c.out)?;
    let single = cfg.train.len() == 1;
    let mut sweep = format!("{hdr}\nlambda_s,final_loss,final_proxy,final_neuron_density,final_pixel_density,weights\n");
    let mut densities = Vec::new();
    let mut files = Vec::new();
    for (i, t) in cfg.train.iter().enumerate() {
        let outcome = sparsetrain::train(&net, &data, t).map_err(runtime_err)?;
        let (wname, lname) = if single {
            ("net.sfnet".to_string(), "train_log.csv".to_string())
        } else {
            (format!("net_{i}.sfnet"), format!("train_log_{i}.csv"))
        };
        let mut log = outcome.log.clone();
        log.push(outcome.final_eval.clone());
        write(&c.out, &lname, train_log_csv(&log, Some(&hdr)))?;
        save_network(&outcome.net, c.out.join(&wname)).map_err(runtime_err)?;
        let f = &outcome.final_eval;
        let _ = writeln!(
            sweep,
            "{},{:.9e},{:.9e},{:.6},{:.6},{wname}",
            t.lambda_s, f.loss, f.proxy, f.mean_neuron_density, f.mean_pixel_density
        );
        println!(
            "lambda_s {}: final proxy {:.5}, neuron density {:.4}, pixel density {:.4}",
            t.lambda_s, f.proxy, f.mean_neuron_density, f.mean_pixel_density
        );
        densities.push((t.lambda_s, f.mean_neuron_density));
        files.push(wname);
    }
    if !single {
        write(&c.out, "sweep.csv", sweep)?;
        let mut sorted = densities.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let monotone = sorted.windows(2).all(|w| w[1].1 <= w[0].1);
        println!("final density non-increasing in lambda_s: {monotone}");
    }
    let manifest = json!({ "header": hdr, "config": cfg, "weights": files });
    write(&c.out, "train.json", serde_json::to_string_pretty(&manifest).map_err(runtime_err)? + "\n")
}

pub fn gen_fixtures(a: &GenArgs) -> Res {
    let task = TaskConfig {
        height: a.resolution.height,
        width: a.resolution.width,
        seed: a.seed,
        ..TaskConfig::default()
    };
    #[derive(Serialize)]
    struct GenConfig {
        command: &'static str,
        task: TaskConfig,
        epochs: usize,
        window_us: u64,
    }
    let cfg = GenConfig {
        command: "gen-fixtures",
        task: task.clone(),
        epochs: a.epochs,
        window_us: FIXTURE_WINDOW_US,
    };
    let data = translating_task(&task).map_err(config_err)?;
    let hdr = header("gen-fixtures", &config_hash(&cfg));
    prepare_out(&a.out)?;
    let sample = &data[0];
    let mut spikes_text = format!("{hdr}\n");
    let tmp: PathBuf = a.out.join("events.txt");
    write_spikes(&tmp, &sample.spikes(FIXTURE_WINDOW_US)).map_err(runtime_err)?;
    spikes_text.push_str(&fs::read_to_string(&tmp).map_err(runtime_err)?);
    write(&a.out, "events.txt", spikes_text)?;
    sample.ground_truth().map_err(runtime_err)?.write(a.out.join("gt.sfgt")).map_err(runtime_err)?;
    let mut files = vec!["events.txt".to_string(), "gt.sfgt".to_string()];
    for kind in [NetworkKind::Ann, NetworkKind::Snn] {
        let shape = FireNetShape {
            kind,
            channels: 8,
            height: task.height,
            width: task.width,
        };
        let net = firenet(shape, a.seed).map_err(runtime_err)?;
        let t = TrainConfig {
            lambda_s: 1e-3,
            epochs: a.epochs,
            seed: a.seed,
            ..TrainConfig::default()
        };
        let outcome = sparsetrain::train(&net, &data, &t).map_err(runtime_err)?;
        let name = if kind == NetworkKind::Ann { "ann" } else { "snn" };
        save_network(&outcome.net, a.out.join(format!("{name}.sfnet"))).map_err(runtime_err)?;
        write(&a.out, &format!("{name}_train_log.csv"), train_log_csv(&outcome.log, Some(&hdr)))?;
        files.push(format!("{name}.sfnet"));
        files.push(format!("{name}_train_log.csv"));
    }
    let manifest = json!({ "header": hdr, "config": cfg, "files": files });
    write(&a.out, "fixtures.json", serde_json::to_string_pretty(&manifest).map_err(runtime_err)? + "\n")?;
    println!("wrote {} fixture files to {}", files.len() + 1, a.out.display());
    Ok(())
}

pub fn self_test(a: &SelfTestArgs) -> Res {
    let opts = SelfTestOptions {
        oracle_instances: a.instances,
        codec_payloads: a.payloads,
        seed: a.seed,
    };
    let checks = run_self_test(&opts);
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} [{}] {}: {}", c.id, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        Err(Failure::Check(failed))
    } else {
        Ok(())
    }
}
