mod scenario;

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use vitalink::clock::{Clock, FixedClock, ManualClock, SystemClock};
use vitalink::engine::dataset::{read_csv, synthetic_samples, write_csv, DEFAULT_ANOMALY_FRACTION, DEFAULT_SET_SIZE};
use vitalink::engine::{
    evaluate, init_model, input_study, reference_model, train, Hyperparams, LabeledSet, MlpModel, StudyConfig, DEFAULT_HIDDEN,
};
use vitalink::gateway::{
    run_gateway, CellDatabase, ForwardPolicy, Gateway, GatewayConfig, LinkScript, PositionInput, ScriptedLink,
    SensorRegistration, SensorType, StaticPosition, DEFAULT_OUTBOX_CAPACITY,
};
use vitalink::sensor::{encode_frame, generate_stream, ReportingMode};
use vitalink::sim::{run_in_process, run_scenario, RunReport};
use vitalink::{LocationFix, LocationSource};
use vitalink_server::{build_server, serve, ClientError, HttpClient, HttpUplink, ServeConfig};

use scenario::{parse_cell, ScenarioConfig};

#[derive(Parser)]
#[command(name = "vitalink", version, about = "Vitals telemetry: sensor, gateway, server and classifier tooling")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Use this instant (ms since epoch) wherever wall-clock time would appear.
    #[arg(long, global = true)]
    fixed_clock: Option<u64>,
    /// Flat TOML file; its schema depends on the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a labeled synthetic training set as CSV.
    GenDataset(GenDatasetArgs),
    /// Train a network on a CSV set and save it.
    Train(TrainArgs),
    /// Score a saved network on a CSV set.
    Evaluate(EvaluateArgs),
    /// Compare 3-input and 4-input networks over repeated fresh datasets.
    Study(StudyArgs),
    /// Run sensor, gateway and server end to end in simulated time.
    Simulate(SimulateArgs),
    /// Run the gateway against a sensor byte stream and a live server.
    Gateway(GatewayArgs),
    /// Run the medical server.
    Serve(ServeArgs),
    /// Emit a scenario's sensor frames.
    Sensor(SensorArgs),
}

#[derive(Args)]
struct GenDatasetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SET_SIZE)]
    size: usize,
    #[arg(long, default_value_t = DEFAULT_ANOMALY_FRACTION)]
    anomaly_fraction: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// 3 uses SpO2, HR and temperature; 4 adds activity.
    #[arg(long, default_value_t = 4)]
    inputs: usize,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    target_loss: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long, default_value_t = 11)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_SET_SIZE)]
    set_size: usize,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Medical server base URL; without it the server runs in-process.
    #[arg(long)]
    server: Option<String>,
    #[arg(long, default_value = "sim-token")]
    token: String,
    /// Model for the in-process server; defaults to one trained from --seed.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GatewayArgs {
    /// `host:port` to read frames from, or `-` for stdin.
    #[arg(long)]
    sensor: String,
    /// Medical server base URL.
    #[arg(long)]
    server: String,
    /// Bearer token issued for the patient.
    #[arg(long)]
    token: String,
    #[arg(long)]
    patient: String,
    /// Cell database CSV: mcc,mnc,lac,ci,lat,lon,accuracy_m.
    #[arg(long)]
    cells: Option<PathBuf>,
    /// TOML with delta_spo2, delta_hr, delta_temp, delta_activity, heartbeat_s.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// CSV of start_s,end_s,state windows gating the uplink.
    #[arg(long)]
    link_script: Option<PathBuf>,
    /// `lat,lon[,accuracy_m]`; omit when the phone has no GPS.
    #[arg(long)]
    gps: Option<String>,
    /// Serving cell as `mcc-mnc-lac-ci`.
    #[arg(long, default_value = "603-1-1000-42")]
    cell: String,
    /// Buffered uploads kept during an outage; the oldest is evicted when full.
    #[arg(long, default_value_t = DEFAULT_OUTBOX_CAPACITY)]
    outbox_capacity: usize,
    /// Sampling rate the sensor was set up with.
    #[arg(long, default_value_t = 1.0)]
    sampling_hz: f64,
    /// After the sensor stream ends, keep retrying the backlog for this long.
    #[arg(long, default_value_t = 0)]
    drain_s: u64,
}

#[derive(Args)]
struct ServeArgs {
    /// Address to bind, e.g. 127.0.0.1:8080.
    #[arg(long)]
    listen: Option<String>,
    /// Directory for record logs and the alert log.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Trained network JSON; without it uploads are stored unclassified.
    #[arg(long)]
    model: Option<PathBuf>,
    /// CSV of token,patient_id.
    #[arg(long)]
    tokens: Option<PathBuf>,
    /// URL that receives each alert as a JSON POST.
    #[arg(long)]
    webhook: Option<String>,
}

#[derive(Args)]
struct SensorArgs {
    /// Serve the stream to the first TCP client on this address.
    #[arg(long, conflicts_with = "out")]
    listen: Option<String>,
    /// Write frames to this file, or `-` for stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pace frames at the sampling rate instead of sending them at once.
    #[arg(long)]
    realtime: bool,
}

struct Ctx {
    seed: u64,
    config: Option<PathBuf>,
    clock: Arc<dyn Clock>,
}

/// Prints the JSON report, then the human-readable table.
fn emit<T: Serialize>(ctx: &Ctx, report: &T, table: &str) -> Result<Value> {
    let mut v = serde_json::to_value(report)?;
    if let Value::Object(m) = &mut v {
        m.insert("generated_ms".into(), ctx.clock.now_ms().into());
    }
    println!("{}", serde_json::to_string_pretty(&v)?);
    if !table.is_empty() {
        println!();
        print!("{table}");
    }
    Ok(v)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let clock: Arc<dyn Clock> = match cli.fixed_clock {
        Some(ms) => Arc::new(FixedClock(ms)),
        None => Arc::new(SystemClock),
    };
    let ctx = Ctx {
        seed: cli.seed,
        config: cli.config,
        clock,
    };
    let result = match cli.command {
        Command::GenDataset(a) => gen_dataset(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::Study(a) => study(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Gateway(a) => gateway(&ctx, a),
        Command::Serve(a) => cmd_serve(&ctx, a),
        Command::Sensor(a) => sensor(&ctx, a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn gen_dataset(ctx: &Ctx, a: GenDatasetArgs) -> Result<ExitCode> {
    if a.size == 0 {
        bail!("size must be at least 1");
    }
    if !(0.0..=1.0).contains(&a.anomaly_fraction) {
        bail!("anomaly fraction must be in [0, 1]");
    }
    let samples = synthetic_samples(a.size, a.anomaly_fraction, ctx.seed);
    let f = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_csv(BufWriter::new(f), &samples)?;
    let anomalies = samples.iter().filter(|s| s.state == vitalink::PatientState::Anomaly).count();
    #[derive(Serialize)]
    struct Report<'a> {
        path: &'a Path,
        rows: usize,
        anomalies: usize,
        anomaly_fraction: f64,
        seed: u64,
    }
    let r = Report {
        path: &a.out,
        rows: samples.len(),
        anomalies,
        anomaly_fraction: anomalies as f64 / samples.len() as f64,
        seed: ctx.seed,
    };
    let table = format!(
        "wrote {} rows ({} anomalous, {:.1}%) to {}\n",
        r.rows,
        r.anomalies,
        100.0 * r.anomaly_fraction,
        a.out.display()
    );
    emit(ctx, &r, &table)?;
    Ok(ExitCode::SUCCESS)
}

fn load_set(path: &Path, n_inputs: usize) -> Result<LabeledSet> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let samples = read_csv(f).with_context(|| format!("parsing {}", path.display()))?;
    Ok(LabeledSet::from_samples(&samples, n_inputs)?)
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> Result<ExitCode> {
    let set = load_set(&a.dataset, a.inputs)?;
    let d = Hyperparams::default();
    let hp = Hyperparams {
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        epochs: a.epochs.unwrap_or(d.epochs),
        seed: ctx.seed,
        init_scale: a.init_scale.unwrap_or(d.init_scale),
        target_loss: a.target_loss.unwrap_or(d.target_loss),
    };
    hp.validate()?;
    let mut model = init_model(a.inputs, a.hidden, hp.init_scale, ctx.seed)?;
    let report = train(&mut model, &set, &hp)?;
    let eval = evaluate(&model, &set)?;
    model.save(&a.out)?;
    #[derive(Serialize)]
    struct Report<'a> {
        model: &'a Path,
        n_inputs: usize,
        n_hidden: usize,
        hyperparams: Hyperparams,
        epochs_run: usize,
        converged: bool,
        final_loss: f64,
        training_accuracy: f64,
        loss_curve: &'a [f64],
    }
    let r = Report {
        model: &a.out,
        n_inputs: a.inputs,
        n_hidden: a.hidden,
        hyperparams: hp,
        epochs_run: report.epochs_run,
        converged: report.converged,
        final_loss: report.final_loss(),
        training_accuracy: eval.accuracy,
        loss_curve: &report.loss_curve,
    };
    let table = format!(
        "epochs {}{}, final loss {:.6}, training accuracy {:.3}\nmodel saved to {}\n",
        r.epochs_run,
        if r.converged { " (reached target loss)" } else { "" },
        r.final_loss,
        r.training_accuracy,
        a.out.display()
    );
    emit(ctx, &r, &table)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<ExitCode> {
    let model = MlpModel::load(&a.model)?;
    let set = load_set(&a.dataset, model.n_inputs)?;
    let e = evaluate(&model, &set)?;
    let c = e.confusion;
    let table = format!(
        "accuracy {:.4}  tp {} tn {} fp {} fn {}\n",
        e.accuracy, c.tp, c.tn, c.fp, c.fn_
    );
    emit(ctx, &e, &table)?;
    Ok(ExitCode::SUCCESS)
}

fn study(ctx: &Ctx, a: StudyArgs) -> Result<ExitCode> {
    let d = StudyConfig::default();
    let cfg = StudyConfig {
        trials: a.trials,
        seed: ctx.seed,
        set_size: a.set_size,
        hyperparams: Hyperparams {
            epochs: a.epochs.unwrap_or(d.hyperparams.epochs),
            ..d.hyperparams
        },
        ..d
    };
    let report = input_study(&cfg)?;
    emit(ctx, &report, &report.to_table())?;
    if report.median_epochs_4 < report.median_epochs_3 {
        eprintln!(
            "warning: 4-input median epochs {} below 3-input {}",
            report.median_epochs_4, report.median_epochs_3
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn scenario_config(ctx: &Ctx) -> Result<(ScenarioConfig, PathBuf)> {
    match &ctx.config {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((ScenarioConfig::load(p)?, base))
        }
        None => Ok((ScenarioConfig::default(), PathBuf::from("."))),
    }
}

fn finish_run(ctx: &Ctx, report: &RunReport, out: Option<&Path>) -> Result<ExitCode> {
    let v = emit(ctx, report, &report.to_table())?;
    if let Some(p) = out {
        std::fs::write(p, serde_json::to_string_pretty(&v)? + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn simulate(ctx: &Ctx, a: SimulateArgs) -> Result<ExitCode> {
    let (cfg, base) = scenario_config(ctx)?;
    let mut sc = cfg.scenario(ctx.seed, &base)?;
    match &a.server {
        None => {
            let model = match &a.model {
                Some(p) => MlpModel::load(p)?,
                None => reference_model(ctx.seed)?.0,
            };
            let (outcome, _) = run_in_process(&sc, Some(model))?;
            finish_run(ctx, &outcome.report, a.report.as_deref())
        }
        Some(url) => {
            let client = HttpClient::new(url)?;
            let status = client
                .status(&sc.patient_id)
                .with_context(|| format!("server at {url} does not know patient {}", sc.patient_id))?;
            sc.first_sequence_no = status.last_sequence_no.unwrap_or(0) + 1;
            let clock = Arc::new(ManualClock::new(sc.stream.start_ms));
            let uplink = HttpUplink::new(client.clone(), a.token.clone());
            let outcome = run_scenario(&sc, uplink, clock, &client)?;
            finish_run(ctx, &outcome.report, a.report.as_deref())
        }
    }
}

fn parse_gps(s: &str) -> Result<LocationFix> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?;
    let (lat, lon, acc) = match v.as_slice() {
        [lat, lon] => (*lat, *lon, vitalink::domain::GPS_DEFAULT_ACCURACY_M),
        [lat, lon, acc] => (*lat, *lon, *acc),
        _ => bail!("gps {s:?} should be lat,lon[,accuracy_m]"),
    };
    let fix = LocationFix {
        lat_deg: lat,
        lon_deg: lon,
        source: LocationSource::Gps,
        accuracy_m: acc,
    };
    fix.validate()?;
    Ok(fix)
}

fn gateway(ctx: &Ctx, a: GatewayArgs) -> Result<ExitCode> {
    let policy = match &a.policy {
        Some(p) => toml::from_str::<ForwardPolicy>(&std::fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => ForwardPolicy::default(),
    };
    let db = match &a.cells {
        Some(p) => CellDatabase::load(p)?,
        None => CellDatabase::new(),
    };
    let link = match &a.link_script {
        Some(p) => LinkScript::load(p)?,
        None => LinkScript::always_up(),
    };
    let position = PositionInput {
        gps: a.gps.as_deref().map(parse_gps).transpose()?,
        cell: parse_cell(&a.cell)?,
    };
    let client = HttpClient::new(&a.server)?;
    let first_seq = match client.status(&a.patient) {
        Ok(s) => s.last_sequence_no.unwrap_or(0) + 1,
        Err(ClientError::Status { code: 404, .. }) => bail!("server does not know patient {}", a.patient),
        Err(e) => {
            tracing::warn!("cannot read resume point ({e}); starting at sequence 1");
            1
        }
    };
    let clock = ctx.clock.clone();
    let origin = clock.now_ms();
    let uplink = ScriptedLink::new(HttpUplink::new(client, a.token.clone()), link, clock.clone(), origin);
    let cfg = GatewayConfig {
        patient_id: a.patient.clone(),
        policy,
        outbox_capacity: a.outbox_capacity,
        first_sequence_no: first_seq,
    };
    let sensor = SensorRegistration::new("sensor-1", SensorType::PulseOximeter, a.sampling_hz, ReportingMode::Raw);
    let mut gw = Gateway::new(cfg, sensor, db, uplink, Box::new(StaticPosition(position)), clock)?;

    let reader: Box<dyn Read> = if a.sensor == "-" {
        Box::new(io::stdin().lock())
    } else {
        Box::new(TcpStream::connect(&a.sensor).with_context(|| format!("connecting to sensor {}", a.sensor))?)
    };
    let stdout = io::stdout();
    let mut print = |ev: &vitalink::gateway::GatewayEvent| {
        let mut out = stdout.lock();
        let _ = serde_json::to_writer(&mut out, ev);
        let _ = writeln!(out);
    };
    run_gateway(reader, &mut gw, &mut print)?;
    let deadline = Instant::now() + Duration::from_secs(a.drain_s);
    while !gw.outbox().is_empty() && Instant::now() < deadline {
        std::thread::sleep(Duration::from_secs(1));
        for ev in gw.flush() {
            print(&ev);
        }
    }
    #[derive(Serialize)]
    struct Summary {
        #[serde(flatten)]
        stats: vitalink::gateway::GatewayStats,
        still_buffered: usize,
    }
    let s = Summary {
        stats: gw.stats(),
        still_buffered: gw.outbox().len(),
    };
    let table = format!(
        "frames {}  errors {}  forwards {}  suppressed {}  uploaded {}  still buffered {}  dropped {}\n",
        s.stats.frames,
        s.stats.frame_errors,
        s.stats.forward_decisions,
        s.stats.suppressed,
        s.stats.uploaded(),
        s.still_buffered,
        s.stats.dropped
    );
    emit(ctx, &s, &table)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(ctx: &Ctx, a: ServeArgs) -> Result<ExitCode> {
    let mut cfg = match &ctx.config {
        Some(p) => ServeConfig::load(p)?,
        None => ServeConfig::default(),
    };
    if let Some(v) = a.listen {
        cfg.listen = v;
    }
    if let Some(v) = a.data_dir {
        cfg.data_dir = v;
    }
    if let Some(v) = a.model {
        cfg.model = Some(v);
    }
    if let Some(v) = a.tokens {
        cfg.tokens = v;
    }
    if let Some(v) = a.webhook {
        cfg.webhook = Some(v);
    }
    let server = Arc::new(build_server(&cfg, ctx.clock.clone())?);
    if server.model().is_none() {
        tracing::warn!("no model configured; uploads will be stored unclassified");
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.listen)
            .await
            .with_context(|| format!("binding {}", cfg.listen))?;
        tracing::info!("listening on {}", listener.local_addr()?);
        serve(listener, server, async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await?;
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn sensor(ctx: &Ctx, a: SensorArgs) -> Result<ExitCode> {
    let (cfg, _) = scenario_config(ctx)?;
    let stream = cfg.stream(ctx.seed)?;
    let samples = generate_stream(&stream)?;
    let mut out: Box<dyn Write> = match (&a.listen, &a.out) {
        (Some(addr), _) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            tracing::info!("sensor waiting on {}", listener.local_addr()?);
            Box::new(listener.accept()?.0)
        }
        (None, Some(p)) if p.as_os_str() == "-" => Box::new(io::stdout().lock()),
        (None, Some(p)) => Box::new(BufWriter::new(File::create(p)?)),
        (None, None) => bail!("give --listen or --out"),
    };
    let period = Duration::from_secs_f64(1.0 / stream.hz);
    for s in &samples {
        out.write_all(encode_frame(s)?.as_bytes())?;
        if a.realtime {
            out.flush()?;
            std::thread::sleep(period);
        }
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}
