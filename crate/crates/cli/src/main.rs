use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use vav_core::agent::{Agent, Choice, RationalAgent, UniformRandomAgent};
use vav_core::bench::{self, builtin_env, gen_random_gridworld, ExperimentConfig, Instance, Method};
use vav_core::epsilon::{
    self, build_epsilon_test, elicit_with, evaluate_test, Candidate, ElicitOptions, EvalContext, FilterMode,
    PreferenceOracle, SyntheticOracle,
};
use vav_core::exact::{administer_with, AlignmentTest, TestPayload};
use vav_core::heuristic::brute_force_test_search;
use vav_core::mdp::{EnvDocument, Environment, FeatureMap, RewardWeights};
use vav_core::omni::{self, OmniManifest, OmniTest};
use vav_core::render::{render_grid, render_side_by_side, Layer};

#[derive(Parser)]
#[command(name = "vav", version, about = "Value alignment verification for gridworld MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create or inspect environments.
    #[command(subcommand)]
    Env(EnvCmd),
    /// Generate or administer alignment tests.
    #[command(subcommand)]
    Test(TestCmd),
    /// Elicit preferences and build an ε-test.
    Elicit(ElicitArgs),
    /// Two-query tests over the gamble-environment family.
    #[command(subcommand)]
    Omni(OmniCmd),
    /// Run a sensitivity study.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

#[derive(Subcommand)]
enum EnvCmd {
    /// Random gridworld with one-hot color features.
    Gen {
        #[arg(long, default_value_t = 5)]
        width: usize,
        #[arg(long, default_value_t = 5)]
        height: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also draw a non-trivial tester reward and write it here.
        #[arg(long)]
        weights_out: Option<PathBuf>,
    },
    /// Island or lava layout with its reference reward.
    Builtin {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        weights_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the grid with the optimal policy under `--weights` if given.
    Show {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    ArpW,
    ArpPref,
    ArpBb,
    Scot,
    Cs,
    RewardSample,
    ValueQuery,
    Brute,
}

#[derive(Subcommand)]
enum TestCmd {
    Gen(TestGenArgs),
    Run(TestRunArgs),
}

#[derive(Args)]
struct TestGenArgs {
    #[arg(long)]
    env: PathBuf,
    /// Tester weights (JSON array); drawn at random if omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// CS gap threshold.
    #[arg(long, default_value_t = 0.2)]
    t: f64,
    /// SCOT rollouts per start state.
    #[arg(long, default_value_t = 1)]
    rollouts: usize,
    /// Brute force: value-gap tolerance.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Brute force: target false-positive rate.
    #[arg(long, default_value_t = 0.05)]
    delta_fpr: f64,
    /// Brute force: sampled candidate rewards.
    #[arg(long, default_value_t = 200)]
    reward_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Print the probed states on the grid.
    #[arg(long)]
    show: bool,
}

#[derive(Args)]
struct TestRunArgs {
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// `rational:<weights.json>` or `random`.
    #[arg(long)]
    agent: String,
    #[arg(long, default_value_t = 1)]
    queries_per_state: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exit with status 1 when the agent fails.
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Synthetic,
    Interactive,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mean,
    EpsDelta,
}

#[derive(Args)]
struct ElicitArgs {
    #[arg(long)]
    env: PathBuf,
    #[arg(long, value_enum)]
    oracle: OracleArg,
    /// Hidden reward for the synthetic oracle.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Number of questions.
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Posterior samples.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Mean)]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset, posterior and ε-test as one JSON document.
    #[arg(long)]
    out: PathBuf,
    /// Synthetic only: write evaluation metrics over an ε sweep to this CSV.
    #[arg(long)]
    eval_csv: Option<PathBuf>,
    /// Comma-separated ε values for `--eval-csv`.
    #[arg(long, default_value = "0,0.5,1,1.5,2,2.5,3,3.5,4,4.5,5")]
    sweep: String,
    #[arg(long, default_value_t = 200)]
    eval_rewards: usize,
}

#[derive(Subcommand)]
enum OmniCmd {
    /// Write the two gamble environments and a manifest.
    Gen {
        /// Raw state reward table (JSON array).
        #[arg(long)]
        reward: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Verify a robot reward against a manifest.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
        /// Robot reward table (JSON array).
        #[arg(long)]
        robot: PathBuf,
        /// Also run the family check against this true reward.
        #[arg(long)]
        reward: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        family: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_env(path: &Path) -> Result<(Environment<f64>, FeatureMap<f64>)> {
    let doc: EnvDocument<f64> = read_json(path)?;
    Ok(doc.into_parts()?)
}

fn tester_weights(
    env: &Environment<f64>,
    features: &FeatureMap<f64>,
    path: Option<&Path>,
    seed: u64,
) -> Result<RewardWeights<f64>> {
    match path {
        Some(p) => {
            let w: RewardWeights<f64> = read_json(p)?;
            if w.len() != features.k() {
                bail!("weights have {} entries, features have {}", w.len(), features.k());
            }
            Ok(w)
        }
        None => Ok(bench::sample_tester_reward(env, features, seed)?.0),
    }
}

fn env_cmd(cmd: EnvCmd) -> Result<ExitCode> {
    match cmd {
        EnvCmd::Gen {
            width,
            height,
            k,
            seed,
            out,
            weights_out,
        } => {
            let (env, features) = gen_random_gridworld::<f64>(width, height, k, seed)?;
            write_json(&out, &EnvDocument::from_parts(&env, &features))?;
            if let Some(p) = weights_out {
                let (w, _) = bench::sample_tester_reward(&env, &features, seed)?;
                write_json(&p, &w)?;
            }
        }
        EnvCmd::Builtin {
            name,
            out,
            weights_out,
            seed: _,
        } => {
            let b = builtin_env::<f64>(&name)?;
            write_json(&out, &EnvDocument::from_parts(&b.env, &b.features))?;
            if let Some(p) = weights_out {
                write_json(&p, &b.w)?;
            }
            println!("features: {}", b.colors.join(", "));
        }
        EnvCmd::Show { env, weights, seed: _ } => {
            let (env, features) = load_env(&env)?;
            let mut layers = Vec::new();
            if let Some(p) = weights {
                let w = tester_weights(&env, &features, Some(&p), 0)?;
                let sol = vav_core::mdp::solve_mdp(&env, &features, &w)?;
                layers.push(Layer::Policy(sol.greedy_actions()));
            }
            print!("{}", render_grid(&env, &features, &layers)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn test_gen(args: TestGenArgs) -> Result<ExitCode> {
    let (env, features) = load_env(&args.env)?;
    let w = tester_weights(&env, &features, args.weights.as_deref(), args.seed)?;
    let solution = vav_core::mdp::solve_mdp(&env, &features, &w)?;
    let inst = Instance {
        env,
        features,
        w,
        solution,
        agents: Vec::new(),
        seed: args.seed,
    };
    let test = match args.method {
        MethodArg::Brute => AlignmentTest {
            payload: TestPayload::ActionQuery(brute_force_test_search(
                &inst.env,
                &inst.features,
                &inst.w,
                args.epsilon,
                args.delta_fpr,
                args.reward_samples,
                0,
                args.seed,
            )?),
            k: inst.features.k(),
            tester_optimal_sets: inst.solution.optimal_sets().to_vec(),
            degenerate: inst.solution.is_trivial(),
        },
        MethodArg::Scot if args.rollouts != 1 => {
            let minimal = vav_core::geometry::minimal_arp(&inst.env, &inst.features, &inst.w)?;
            AlignmentTest {
                payload: TestPayload::ActionQuery(vav_core::heuristic::gen_scot_from(
                    &inst.env,
                    &inst.features,
                    &inst.solution,
                    &minimal,
                    args.rollouts,
                    None,
                    args.seed,
                )?),
                k: inst.features.k(),
                tester_optimal_sets: inst.solution.optimal_sets().to_vec(),
                degenerate: false,
            }
        }
        m => {
            let method = match m {
                MethodArg::ArpW => Method::ArpW,
                MethodArg::ArpPref => Method::ArpPref,
                MethodArg::ArpBb => Method::ArpBb,
                MethodArg::Scot => Method::Scot,
                MethodArg::Cs => Method::Cs,
                MethodArg::RewardSample => Method::RewardSample,
                MethodArg::ValueQuery => Method::ValueQuery,
                MethodArg::Brute => unreachable!(),
            };
            bench::build_test(&inst, method, Some(args.t))?
        }
    };
    write_json(&args.out, &test)?;
    println!("{} test, {} planned queries", test.kind(), test.planned_queries());
    if args.show {
        let probes = match &test.payload {
            TestPayload::ActionQuery(t) => t.states.clone(),
            TestPayload::RewardSample { states, .. } => states.clone(),
            TestPayload::ValueQuery { probes, .. } => probes.iter().map(|p| p.state).collect(),
            _ => Vec::new(),
        };
        if inst.env.layout().is_some() {
            print!(
                "{}",
                render_grid(
                    &inst.env,
                    &inst.features,
                    &[Layer::Policy(inst.solution.greedy_actions()), Layer::Probes(probes)]
                )?
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_agent(spec: &str, env: &Environment<f64>, features: &FeatureMap<f64>) -> Result<Box<dyn Agent<f64>>> {
    if spec == "random" {
        return Ok(Box::new(UniformRandomAgent {
            n_actions: env.n_actions(),
        }));
    }
    if let Some(path) = spec.strip_prefix("rational:") {
        let w = tester_weights(env, features, Some(Path::new(path)), 0)?;
        return Ok(Box::new(RationalAgent::new(env, features, w)?));
    }
    bail!("unknown agent '{spec}': expected rational:<weights.json> or random")
}

fn test_run(args: TestRunArgs) -> Result<ExitCode> {
    use vav_core::bench::cell_seed;
    let (env, features) = load_env(&args.env)?;
    let test: AlignmentTest<f64> = read_json(&args.test)?;
    if test.k != features.k() {
        bail!("test expects {} features, environment has {}", test.k, features.k());
    }
    let agent = parse_agent(&args.agent, &env, &features)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(args.seed, &[]));
    let verdict = administer_with(&test, agent.as_ref(), args.queries_per_state, &mut rng)?;
    println!("{}", serde_json::to_string_pretty(&verdict)?);
    Ok(if args.strict && !verdict.passed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

/// Reads "1" or "2" after showing both trajectories.
struct InteractiveOracle<'a, R, W> {
    env: &'a Environment<f64>,
    features: &'a FeatureMap<f64>,
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> PreferenceOracle<f64> for InteractiveOracle<'_, R, W> {
    fn answer(&mut self, first: &Candidate<f64>, second: &Candidate<f64>) -> vav_core::Result<Choice> {
        let io_err = |e: io::Error| vav_core::Error::MalformedAnswer(e.to_string());
        let draw = |c: &Candidate<f64>| -> vav_core::Result<String> {
            if self.env.layout().is_some() {
                render_grid(self.env, self.features, &[Layer::Path(c.trajectory.states.clone())])
            } else {
                Ok(format!("{:?}\n", c.trajectory.states))
            }
        };
        let (a, b) = (draw(first)?, draw(second)?);
        write!(self.output, "\n{}", render_side_by_side(&a, &b)).map_err(io_err)?;
        let fmt = |f: &[f64]| f.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
        writeln!(self.output, "features [1]: {}\nfeatures [2]: {}", fmt(&first.features), fmt(&second.features))
            .map_err(io_err)?;
        loop {
            write!(self.output, "prefer 1 or 2? ").map_err(io_err)?;
            self.output.flush().map_err(io_err)?;
            let mut line = String::new();
            if self.input.read_line(&mut line).map_err(io_err)? == 0 {
                return Err(vav_core::Error::MalformedAnswer("input closed".into()));
            }
            match line.trim() {
                "1" => return Ok(Choice::First),
                "2" => return Ok(Choice::Second),
                _ => writeln!(self.output, "please answer 1 or 2").map_err(io_err)?,
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ElicitOutput {
    dataset: epsilon::PreferenceDataset<f64>,
    posterior: epsilon::PosteriorSamples<f64>,
    test: epsilon::EpsilonTest<f64>,
}

fn elicit_cmd(args: ElicitArgs) -> Result<ExitCode> {
    let (env, features) = load_env(&args.env)?;
    let mode = match args.mode {
        ModeArg::Mean => FilterMode::Mean,
        ModeArg::EpsDelta => FilterMode::EpsDelta(args.delta),
    };
    let opts = ElicitOptions {
        horizon: args.horizon,
        keep_generated: args.eval_csv.is_some(),
        ..Default::default()
    };
    let mut w_true = None;
    let result = match args.oracle {
        OracleArg::Synthetic => {
            let w = tester_weights(&env, &features, args.weights.as_deref(), args.seed)?;
            w_true = Some(w.0.clone());
            let mut oracle = SyntheticOracle { w_true: w.0 };
            elicit_with(&env, &features, &mut oracle, args.n, args.samples, args.seed, &opts)?
        }
        OracleArg::Interactive => {
            if args.eval_csv.is_some() {
                bail!("--eval-csv needs the synthetic oracle");
            }
            let stdin = io::stdin();
            let mut oracle = InteractiveOracle {
                env: &env,
                features: &features,
                input: stdin.lock(),
                output: io::stdout(),
            };
            elicit_with(&env, &features, &mut oracle, args.n, args.samples, args.seed, &opts)?
        }
    };
    let test = build_epsilon_test(&result.dataset, &result.posterior, args.epsilon, mode)?;
    println!(
        "{} questions asked, {} in the ε = {} test, chain acceptance {:.3}",
        result.dataset.len(),
        test.questions.len(),
        args.epsilon,
        result.posterior.acceptance
    );
    if let (Some(path), Some(w)) = (&args.eval_csv, &w_true) {
        let mut csv = String::from("epsilon,n,seed,accuracy,fpr,fnr\n");
        for tok in args.sweep.split(',') {
            let eps: f64 = tok.trim().parse().with_context(|| format!("bad ε value '{tok}'"))?;
            let t = build_epsilon_test(&result.dataset, &result.posterior, eps, mode)?;
            let ctx = EvalContext {
                held_out: &result.generated,
                env: None,
            };
            let m = evaluate_test(&t, &ctx, w, args.eval_rewards, args.seed)?.protocol;
            csv.push_str(&format!(
                "{:.6},{},{},{:.6},{:.6},{:.6}\n",
                eps, args.n, args.seed, m.accuracy, m.fpr, m.fnr
            ));
        }
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    write_json(
        &args.out,
        &ElicitOutput {
            dataset: result.dataset,
            posterior: result.posterior,
            test,
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

fn omni_cmd(cmd: OmniCmd) -> Result<ExitCode> {
    match cmd {
        OmniCmd::Gen {
            reward,
            epsilon,
            gamma,
            out_dir,
            seed: _,
        } => {
            let r: Vec<f64> = read_json(&reward)?;
            let test = omni::build_omni_test(&r, epsilon, gamma)?;
            fs::create_dir_all(&out_dir)?;
            let ident = FeatureMap::identity(r.len());
            write_json(&out_dir.join("env_l.json"), &EnvDocument::from_parts(&test.env_l, &ident))?;
            write_json(&out_dir.join("env_u.json"), &EnvDocument::from_parts(&test.env_u, &ident))?;
            write_json(&out_dir.join("manifest.json"), &test.manifest("env_l.json", "env_u.json"))?;
            println!("wrote {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        OmniCmd::Verify {
            manifest,
            robot,
            reward,
            family,
            seed,
        } => {
            let m: OmniManifest<f64> = read_json(&manifest)?;
            let dir = manifest.parent().unwrap_or(Path::new("."));
            let (env_l, _) = load_env(&dir.join(&m.env_l))?;
            let (env_u, _) = load_env(&dir.join(&m.env_u))?;
            let epsilon = m.epsilon;
            let test = OmniTest::from_manifest(m, env_l, env_u)?;
            let r_robot: Vec<f64> = read_json(&robot)?;
            let passed = omni::verify_robot(&test, &r_robot)?;
            println!("omni test: {}", if passed { "PASS" } else { "FAIL" });
            if let Some(p) = reward {
                let r_true: Vec<f64> = read_json(&p)?;
                let f = omni::family_alignment_check(&r_true, &r_robot, epsilon, family, seed)?;
                println!(
                    "family check over {family} environments: {} (worst gap {:.6})",
                    if f.passed { "PASS" } else { "FAIL" },
                    f.worst_gap
                );
            }
            Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn experiment_cmd(cmd: ExperimentCmd) -> Result<ExitCode> {
    let ExperimentCmd::Run { config, out, json, seed } = cmd;
    let mut cfg: ExperimentConfig = read_json(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = bench::run_sensitivity(&cfg)?;
    report.write_files(&out, json.as_deref())?;
    for r in &report.rows {
        if !r.errors.is_empty() {
            log::warn!("{} {}x{} k={}: {} failed cells", r.method.label(), r.grid_w, r.grid_h, r.k, r.errors.len());
        }
    }
    if report.invariant_violations.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for v in &report.invariant_violations {
            eprintln!("invariant violated: {v}");
        }
        Ok(ExitCode::from(2))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Env(c) => env_cmd(c),
        Command::Test(TestCmd::Gen(a)) => test_gen(a),
        Command::Test(TestCmd::Run(a)) => test_run(a),
        Command::Elicit(a) => elicit_cmd(a),
        Command::Omni(c) => omni_cmd(c),
        Command::Experiment(c) => experiment_cmd(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
