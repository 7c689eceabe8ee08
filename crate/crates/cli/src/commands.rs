use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use rlpm_core::model_io;
use rlpm_core::prototype::{activation_maximize, PrototypeConfig, PrototypeInit};
use rlpm_core::relprop::conservation_report;
use rlpm_core::render::{self, ColorScale};
use rlpm_core::saliency::{compare_methods, pixel_flip_curve, FlipMethod, FlipPolicy};
use rlpm_core::wholeimage::{aligned_image_size, dense_to_conv, HeadConfig, PatchClassifier, WholeImageClassifier};
use rlpm_core::{
    class_probabilities, explain, DeepTaylorPreset, InputBounds, NetworkGraph, RelevanceMap, RuleConfig, Strategy,
    Tensor,
};

use crate::imageio::{self, ImageFormat};
use crate::mapcsv;
use crate::{
    CliError, Command, CompareArgs, ConvertArgs, ExplainArgs, FlipArgs, ImageArgs, InferArgs, PolicyName,
    PrototypeArgs, RuleArgs, RuleName, ValidateArgs,
};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const THREADS_ENV: &str = "RLPM_THREADS";

type Out<'a> = &'a mut dyn Write;

pub fn dispatch(command: Command, out: Out, err: Out) -> Result<i32, CliError> {
    match command {
        Command::Infer(a) => infer(a, out, err),
        Command::Explain(a) => explain_cmd(a, out, err),
        Command::Flip(a) => flip(a, out, err),
        Command::Compare(a) => compare(a, out, err),
        Command::Prototype(a) => prototype(a, out, err),
        Command::Convert(a) => convert(a, out, err),
        Command::Validate(a) => validate(a, out, err),
    }
}

fn emit(stream: Out, bytes: &[u8]) -> Result<(), CliError> {
    stream
        .write_all(bytes)
        .map_err(|e| CliError::Data(format!("writing output: {e}")))
}

fn log_config(err: Out, config: serde_json::Value) -> Result<(), CliError> {
    emit(err, format!("{config}\n").as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| {
        CliError::Core(rlpm_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn load_model(path: &Path) -> Result<NetworkGraph, CliError> {
    Ok(model_io::load(path)?)
}

fn image_format(args: &ImageArgs) -> ImageFormat {
    args.format.unwrap_or_else(|| ImageFormat::from_path(&args.image))
}

fn load_input(args: &ImageArgs, net: &NetworkGraph) -> Result<Tensor, CliError> {
    let image = imageio::read_image(&args.image, image_format(args))?;
    imageio::conform(image, net.input_shape())
}

fn parse_bounds(text: &str) -> Result<InputBounds, CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    let bad = || CliError::Usage(format!("--bounds expects LO,HI, got {text:?}"));
    let [lo, hi] = parts.as_slice() else { return Err(bad()) };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    InputBounds::uniform(lo, hi).map_err(|e| CliError::Usage(e.to_string()))
}

fn rule_from_name(name: &str) -> Result<RuleName, CliError> {
    <RuleName as clap::ValueEnum>::from_str(name.trim(), false)
        .map_err(|_| CliError::Usage(format!("unknown rule {name:?}")))
}

/// Resolves a rule name plus `--epsilon`/`--bounds` into a strategy.
/// `deep-taylor` uses z^B with bounds and w^2 without.
pub fn strategy(rule: RuleName, args: &RuleArgs) -> Result<Strategy, CliError> {
    let bounds = args.bounds.as_deref().map(parse_bounds).transpose()?;
    let usage = |e: rlpm_core::Error| CliError::Usage(e.to_string());
    Ok(match rule {
        RuleName::Lrp0 => RuleConfig::lrp0().into(),
        RuleName::LrpEps => RuleConfig::lrp_eps(args.epsilon.unwrap_or(DEFAULT_EPSILON)).map_err(usage)?.into(),
        RuleName::Zplus => RuleConfig::zplus().into(),
        RuleName::Zb => {
            let b = bounds.ok_or_else(|| CliError::Usage("rule zb needs --bounds LO,HI".into()))?;
            RuleConfig::zb(b).into()
        }
        RuleName::Wsquare => RuleConfig::wsquare().into(),
        RuleName::DeepTaylor => match bounds {
            Some(b) => DeepTaylorPreset::bounded(b).into(),
            None => DeepTaylorPreset::unbounded().into(),
        },
        RuleName::Gxi => RuleConfig::gradient_times_input().into(),
    })
}

fn strategy_json(s: &Strategy) -> serde_json::Value {
    let cfg = match s {
        Strategy::Uniform(c) => c,
        Strategy::DeepTaylor(p) => &p.input_rule,
    };
    json!({
        "name": s.name(),
        "epsilon": cfg.epsilon(),
        "bounds": cfg.input_bounds().map(|b| json!([b.low(), b.high()])),
    })
}

fn policy(p: PolicyName) -> FlipPolicy {
    match p {
        PolicyName::Zero => FlipPolicy::Zero,
        PolicyName::Mean => FlipPolicy::ImageMean,
    }
}

fn check_batch(batch: f64) -> Result<(), CliError> {
    if batch > 0.0 && batch <= 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--batch must be in (0, 1], got {batch}")))
    }
}

/// Worker count from `RLPM_THREADS`, else the available parallelism.
pub fn thread_count() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn infer(a: InferArgs, out: Out, err: Out) -> Result<i32, CliError> {
    log_config(
        err,
        json!({
            "command": "infer",
            "model": path_str(&a.input.model),
            "image": path_str(&a.input.image),
            "format": image_format(&a.input),
        }),
    )?;
    let net = load_model(&a.input.model)?;
    let x = load_input(&a.input, &net)?;
    let p = class_probabilities(&net, &x)?;
    let mut text = String::from("class,probability\n");
    for (k, v) in p.data().iter().enumerate() {
        text.push_str(&format!("{k},{v}\n"));
    }
    emit(out, text.as_bytes())?;
    Ok(0)
}

fn explain_cmd(a: ExplainArgs, out: Out, err: Out) -> Result<i32, CliError> {
    let strat = strategy(a.rule, &a.rule_args)?;
    log_config(
        err,
        json!({
            "command": "explain",
            "model": path_str(&a.input.model),
            "image": path_str(&a.input.image),
            "format": image_format(&a.input),
            "class": a.class,
            "rule": strategy_json(&strat),
            "out": path_str(&a.out),
            "png_out": a.png_out.as_deref().map(path_str),
        }),
    )?;
    let net = load_model(&a.input.model)?;
    let x = load_input(&a.input, &net)?;
    let map = explain(&net, &x, a.class, strat)?;
    write_file(&a.out, &mapcsv::write_map(&map.values)?)?;
    if let Some(path) = &a.png_out {
        let heat = render::normalize(&render::channel_sum(&map.values));
        render::to_image(&heat, &ColorScale::default(), path)?;
    }
    let report = conservation_report(&map);
    emit(
        out,
        format!(
            "class,rule,start_value,relevance_sum\n{},{},{},{}\n",
            map.target_class, map.rule_used, report.start_value, report.sum_in
        )
        .as_bytes(),
    )?;
    Ok(0)
}

fn flip(a: FlipArgs, out: Out, err: Out) -> Result<i32, CliError> {
    check_batch(a.batch)?;
    let net = load_model(&a.input.model)?;
    let x = load_input(&a.input, &net)?;
    let values = mapcsv::read_map(&a.map, x.shape())?;
    let class = match a.class {
        Some(c) => c,
        None => class_probabilities(&net, &x)?.argmax(),
    };
    if class >= net.output_classes() {
        return Err(CliError::Core(rlpm_core::Error::Index {
            index: class,
            count: net.output_classes(),
        }));
    }
    log_config(
        err,
        json!({
            "command": "flip",
            "model": path_str(&a.input.model),
            "image": path_str(&a.input.image),
            "format": image_format(&a.input),
            "map": path_str(&a.map),
            "policy": policy(a.policy),
            "batch": a.batch,
            "class": class,
        }),
    )?;
    let map = RelevanceMap {
        values,
        start_value: 0.0,
        rule_used: RuleConfig::lrp0().into(),
        target_class: class,
    };
    let curve = pixel_flip_curve(&net, &x, &map, policy(a.policy), a.batch)?;
    let mut text = String::from("fraction,score\n");
    for (f, s) in curve.fractions.iter().zip(&curve.scores) {
        text.push_str(&format!("{f},{s}\n"));
    }
    text.push_str(&format!("# auc: {:.6}\n", curve.auc));
    emit(out, text.as_bytes())?;
    Ok(0)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("pgm" | "raw32")
                )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no .pgm or .raw32 images in {}", dir.display())));
    }
    Ok(files)
}

fn compare(a: CompareArgs, out: Out, err: Out) -> Result<i32, CliError> {
    check_batch(a.batch)?;
    let threads = thread_count()?;
    let mut methods = vec![FlipMethod::Random];
    for name in a.rules.split(',').filter(|s| !s.trim().is_empty()) {
        if name.trim() == "random" {
            continue;
        }
        methods.push(FlipMethod::Explain(strategy(rule_from_name(name)?, &a.rule_args)?));
    }
    let net = load_model(&a.model)?;
    let files = image_files(&a.images)?;
    let images = files
        .iter()
        .map(|p| imageio::conform(imageio::read_image(p, ImageFormat::from_path(p))?, net.input_shape()))
        .collect::<Result<Vec<_>, _>>()?;
    let ids: Vec<String> = files
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    log_config(
        err,
        json!({
            "command": "compare",
            "model": path_str(&a.model),
            "images": path_str(&a.images),
            "image_count": images.len(),
            "methods": methods.iter().map(FlipMethod::name).collect::<Vec<_>>(),
            "seed": a.seed,
            "policy": policy(a.policy),
            "batch": a.batch,
            "threads": threads,
        }),
    )?;
    let table = compare_methods(&net, &images, &methods, policy(a.policy), a.batch, a.seed, threads)?;
    let mut text = String::from("method,image_id,auc\n");
    for row in &table {
        for (id, auc) in ids.iter().zip(&row.aucs) {
            text.push_str(&format!("{},{id},{auc:.6}\n", row.method));
        }
    }
    text.push_str("# method,mean_auc,std_auc,images\n");
    for row in &table {
        text.push_str(&format!(
            "# {},{:.6},{:.6},{}\n",
            row.method,
            row.mean_auc,
            row.std_auc,
            row.aucs.len()
        ));
    }
    emit(out, text.as_bytes())?;
    Ok(0)
}

fn prototype(a: PrototypeArgs, out: Out, err: Out) -> Result<i32, CliError> {
    let init = match a.seed {
        Some(seed) => PrototypeInit::SeededGaussian { sigma: a.sigma, seed },
        None => PrototypeInit::Zeros,
    };
    let cfg = PrototypeConfig {
        lambda: a.lambda,
        steps: a.steps,
        step_size: a.step_size,
        init,
        target_class: a.class,
    };
    if !(cfg.lambda >= 0.0) || !(cfg.step_size > 0.0) || !(a.sigma >= 0.0) {
        return Err(CliError::Usage("--lambda and --sigma must be >= 0, --step-size > 0".into()));
    }
    let net = load_model(&a.model)?;
    log_config(
        err,
        json!({
            "command": "prototype",
            "model": path_str(&a.model),
            "config": cfg,
            "out": path_str(&a.out),
        }),
    )?;
    let (x, trace) = activation_maximize(&net, &cfg)?;
    render::to_grayscale(&render::normalize(&x), &a.out)?;
    let mut text = String::from("step,objective\n");
    for (i, v) in trace.iter().enumerate() {
        text.push_str(&format!("{i},{v}\n"));
    }
    emit(out, text.as_bytes())?;
    Ok(0)
}

fn parse_size(text: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("--image expects ROWSxCOLS, got {text:?}"));
    let (r, c) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

fn convert(a: ConvertArgs, out: Out, err: Out) -> Result<i32, CliError> {
    let hidden = a
        .hidden
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<usize>().ok().filter(|&w| w > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| CliError::Usage(format!("--hidden expects positive widths, got {:?}", a.hidden)))?;
    if a.pool == 0 {
        return Err(CliError::Usage("--pool must be positive".into()));
    }
    let requested = a.image.as_deref().map(parse_size).transpose()?;
    let patch = PatchClassifier::new(load_model(&a.patch_model)?)?;
    let fconv = dense_to_conv(&patch)?;
    let (p, q) = patch.patch_size();
    let size = aligned_image_size(&fconv, requested.unwrap_or((4 * p, 4 * q)))?;
    let channels = patch.net().input_shape()[2];
    let head = HeadConfig {
        pool_window: a.pool,
        hidden_widths: hidden,
    };
    log_config(
        err,
        json!({
            "command": "convert",
            "patch_model": path_str(&a.patch_model),
            "out": path_str(&a.out),
            "image": [size.0, size.1, channels],
            "head": head,
            "seed": a.seed,
        }),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let shape = [size.0, size.1, channels];
    let whole = WholeImageClassifier::build(&mut rng, &patch, &shape, &head)?;
    let net = whole.compose(&shape)?;
    model_io::save(&net, &a.out)?;
    emit(out, model_io::describe(&net).as_bytes())?;
    Ok(0)
}

fn validate(a: ValidateArgs, out: Out, err: Out) -> Result<i32, CliError> {
    log_config(err, json!({"command": "validate", "model": path_str(&a.model)}))?;
    let report = model_io::validate(&a.model);
    emit(out, report.text.as_bytes())?;
    Ok(if report.valid { 0 } else { 2 })
}
