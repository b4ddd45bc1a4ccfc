use std::path::Path;

use serde_json::{json, Value};

use klsynth::automata::{
    build_product_mdp, formula_to_dfa, min_time_reference, parse_cosafe, product_dfa, Dfa,
    ReferencePolicy,
};
use klsynth::conic::ClarabelSolver;
use klsynth::deceptive::{
    heatmap_csv, preprocess_finiteness, residence_heatmap, solution_to_json, solve_deceptive,
};
use klsynth::mdp::io::{mdp_from_json, mdp_to_json, policy_from_json};
use klsynth::mdp::{policy_to_residence_times, Mdp, StationaryPolicy};
use klsynth::models::{self, grid20_spec, grid4_spec, GridSpec, RandomMdpConfig};
use klsynth::reference::{
    admm_reference, ccp_fixed_agent, history_csv, lp_relaxation_reference, AdmmConfig, CcpConfig,
    ReferenceProblem,
};
use klsynth::simulation::{
    experiment_csv, run_detection_experiment, run_detection_on, ExperimentConfig, ExperimentModel,
    ExperimentResult, ModelSpec,
};

use crate::output::Run;
use crate::{
    CmdResult, DeceptiveArgs, ExperimentArgs, Failure, GridArgs, Method, Preset, RandomArgs,
    ReferenceArgs, ValidateArgs,
};

fn load_model(run: &mut Run, path: &Path) -> Result<Mdp, Failure> {
    let text = run.read(path)?;
    mdp_from_json(&text).map_err(|e| Failure::at("load model", e))
}

fn props(m: &Mdp) -> Vec<String> {
    m.atomic_props.iter().cloned().collect()
}

fn automaton(m: &Mdp, formula: &str) -> Result<Dfa, Failure> {
    let f = parse_cosafe(formula).map_err(|e| Failure::at("parse formula", e))?;
    formula_to_dfa(&f, &props(m)).map_err(|e| Failure::at("build automaton", e))
}

fn sup_automaton(m: &Mdp, formula: Option<&str>) -> Result<Dfa, Failure> {
    match formula {
        Some(f) => automaton(m, f),
        None => Dfa::trivial(&props(m)).map_err(|e| Failure::at("build automaton", e)),
    }
}

/// Policy from inline JSON or from a file.
fn load_policy(run: &mut Run, m: &Mdp, source: &str) -> Result<StationaryPolicy, Failure> {
    let text = if source.trim_start().starts_with('{') {
        source.to_string()
    } else {
        run.read(Path::new(source))?
    };
    policy_from_json(m, &text).map_err(|e| Failure::at("load policy", e))
}

fn policy_json(m: &Mdp, pi: &StationaryPolicy) -> String {
    let rows: Vec<Value> = (0..m.num_states())
        .map(|s| {
            let actions: Vec<Value> = m.actions[s]
                .iter()
                .zip(&pi.rows[s])
                .map(|(a, p)| json!([a.name, p]))
                .collect();
            json!({"state": m.name(s), "actions": actions})
        })
        .collect();
    serde_json::to_string_pretty(&json!({ "policy": rows })).expect("policy serializes")
}

/// Divergences may be infinite, which JSON numbers cannot carry.
fn kl_json(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!("inf")
    }
}

fn parse_cell(text: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::usage(format!("expected ROW,COL, got '{text}'"));
    let (r, c) = text.split_once(',').ok_or_else(bad)?;
    Ok((
        r.trim().parse().map_err(|_| bad())?,
        c.trim().parse().map_err(|_| bad())?,
    ))
}

fn parse_label(text: &str) -> Result<(String, usize, usize), Failure> {
    let (p, cell) = text
        .split_once('@')
        .ok_or_else(|| Failure::usage(format!("expected PROP@ROW,COL, got '{text}'")))?;
    let (r, c) = parse_cell(cell)?;
    Ok((p.to_string(), r, c))
}

pub fn validate(a: ValidateArgs) -> CmdResult {
    let mut run = Run::new("validate");
    let m = load_model(&mut run, &a.model)?;
    println!(
        "{}: {} states, {} state-action pairs, propositions {:?}",
        a.model.display(),
        m.num_states(),
        m.num_state_actions(),
        props(&m)
    );
    for (who, f) in [("supervisor", &a.phi_sup), ("agent", &a.phi_agent)] {
        if let Some(f) = f {
            let d = automaton(&m, f)?;
            println!(
                "{who} formula '{f}': automaton with {} states",
                d.num_states()
            );
        }
    }
    Ok(())
}

pub fn gridworld(a: GridArgs) -> CmdResult {
    let mut spec = match a.preset {
        Some(Preset::Grid20) => grid20_spec(),
        Some(Preset::Grid4) => grid4_spec(),
        None => GridSpec {
            rows: a
                .rows
                .ok_or_else(|| Failure::usage("--rows is required without --preset"))?,
            cols: a
                .cols
                .ok_or_else(|| Failure::usage("--cols is required without --preset"))?,
            labels: Vec::new(),
            slip: 0.3,
            self_loops: Vec::new(),
            initial: (0, 0),
        },
    };
    if a.preset.is_some() {
        spec.rows = a.rows.unwrap_or(spec.rows);
        spec.cols = a.cols.unwrap_or(spec.cols);
    }
    if !a.labels.is_empty() {
        spec.labels = a
            .labels
            .iter()
            .map(|l| parse_label(l))
            .collect::<Result<_, _>>()?;
    }
    if !a.self_loops.is_empty() {
        spec.self_loops = a
            .self_loops
            .iter()
            .map(|c| parse_cell(c))
            .collect::<Result<_, _>>()?;
    }
    if let Some(s) = a.slip {
        spec.slip = s;
    }
    if let Some(c) = &a.initial {
        spec.initial = parse_cell(c)?;
    }
    let m = models::gridworld(&spec).map_err(|e| Failure::at("gridworld", e))?;
    let text = mdp_to_json(&m);
    match a.out {
        None => {
            println!("{text}");
            Ok(())
        }
        Some(dir) => {
            let mut run = Run::new("gridworld");
            run.add("model.json", text);
            run.finish(&dir, &serde_json::to_value(&spec).expect("spec serializes"))
        }
    }
}

pub fn random_mdp_cmd(a: &RandomArgs) -> RandomMdpConfig {
    RandomMdpConfig {
        transient: a.transient,
        successors: a.successors,
        exit_prob: a.exit_prob,
        target_reach: a.target_reach,
        seed: a.seed,
    }
}

pub fn random_mdp(a: RandomArgs) -> CmdResult {
    let cfg = random_mdp_cmd(&a);
    let rm = models::random_mdp(&cfg).map_err(|e| Failure::at("random model", e))?;
    println!(
        "target {} is reached by the reference with probability {:.4}",
        rm.mdp.name(rm.target),
        rm.target_reach
    );
    let experiment = ExperimentConfig {
        model: ModelSpec::File {
            mdp: "model.json".into(),
            reference: "reference.json".into(),
            formula: "F target".into(),
        },
        seed: cfg.seed,
        ..Default::default()
    };
    let mut run = Run::new("random-mdp");
    run.add("model.json", mdp_to_json(&rm.mdp));
    run.add("reference.json", policy_json(&rm.mdp, &rm.reference));
    run.add(
        "experiment.json",
        serde_json::to_string_pretty(&experiment).expect("config serializes"),
    );
    run.finish(
        &a.out,
        &serde_json::to_value(cfg).expect("config serializes"),
    )
}

pub fn synth_deceptive(a: DeceptiveArgs) -> CmdResult {
    let mut run = Run::new("synth-deceptive");
    let m = load_model(&mut run, &a.model)?;
    if !(0.0..=1.0).contains(&a.nu_agent) {
        return Err(Failure::usage(format!(
            "--nu-agent {} outside [0, 1]",
            a.nu_agent
        )));
    }
    let agent = automaton(&m, &a.phi_agent)?;
    let (sup, reference) = match a.reference.strip_prefix("min-time:") {
        Some(f) => {
            let sup = automaton(&m, f)?;
            let r =
                min_time_reference(&m, &sup).map_err(|e| Failure::at("min-time reference", e))?;
            (sup, r)
        }
        None => {
            let pi = load_policy(&mut run, &m, &a.reference)?;
            (
                sup_automaton(&m, a.phi_sup.as_deref())?,
                ReferencePolicy::Base(pi),
            )
        }
    };
    let dp = product_dfa(&sup, &agent).map_err(|e| Failure::at("product automaton", e))?;
    let product = build_product_mdp(&m, &dp, &reference).map_err(|e| Failure::at("product", e))?;
    let problem =
        preprocess_finiteness(&product, a.nu_agent).map_err(|e| Failure::at("preprocess", e))?;
    let sol = solve_deceptive(&problem, &ClarabelSolver::default())
        .map_err(|e| Failure::at("solve", e))?;
    println!(
        "kl {:.6} nats ({:.6} bits); agent task probability {:.6}; reference task probability {:.3e}",
        sol.kl_value,
        sol.kl_value / std::f64::consts::LN_2,
        sol.satisfaction_prob,
        sol.reference_satisfaction
    );
    run.add("solution.json", solution_to_json(&problem, &sol));
    let cells = residence_heatmap(problem.mdp(), &sol.residence);
    if !cells.is_empty() {
        run.add("heatmap.csv", heatmap_csv(&cells));
    }
    let config = json!({
        "model": a.model.display().to_string(),
        "ref": a.reference,
        "phi_sup": a.phi_sup,
        "phi_agent": a.phi_agent,
        "nu_agent": a.nu_agent,
    });
    run.finish(&a.out, &config)
}

fn read_config<T: serde::de::DeserializeOwned + Default>(
    run: &mut Run,
    path: Option<&Path>,
) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = run.read(p)?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::usage(format!("config {}: {e}", p.display())))
        }
    }
}

/// Base-model policy lifted onto the product states of `p`.
fn lift(
    m: &Mdp,
    p: &ReferenceProblem,
    dp: &klsynth::automata::ProductDfa,
    pi: StationaryPolicy,
) -> Result<StationaryPolicy, Failure> {
    let lifted = build_product_mdp(m, dp, &ReferencePolicy::Base(pi))
        .map_err(|e| Failure::at("lift policy", e))?;
    debug_assert_eq!(lifted.num_states(), p.product.num_states());
    Ok(lifted.reference)
}

pub fn synth_reference(a: ReferenceArgs) -> CmdResult {
    let mut run = Run::new("synth-reference");
    let m = load_model(&mut run, &a.model)?;
    let sup = sup_automaton(&m, a.phi_sup.as_deref())?;
    let agent = automaton(&m, &a.phi_agent)?;
    let dp = product_dfa(&sup, &agent).map_err(|e| Failure::at("product automaton", e))?;
    if matches!(a.method, Method::Ccp) && a.agent.is_none() {
        return Err(Failure::usage("--method ccp requires --agent"));
    }
    let admm_cfg: AdmmConfig = match a.method {
        Method::Admm => read_config(&mut run, a.config.as_deref())?,
        _ => AdmmConfig::default(),
    };
    let ccp_cfg: CcpConfig = match a.method {
        Method::Ccp => read_config(&mut run, a.config.as_deref())?,
        _ => CcpConfig::default(),
    };
    let solver = ClarabelSolver::default();
    let p = ReferenceProblem::from_model(&m, &dp, a.nu_sup, a.nu_agent, &solver)
        .map_err(|e| Failure::at("reference problem", e))?;
    let mut config = json!({
        "model": a.model.display().to_string(),
        "phi_sup": a.phi_sup,
        "phi_agent": a.phi_agent,
        "nu_sup": a.nu_sup,
        "nu_agent": a.nu_agent,
    });
    let policy = match a.method {
        Method::Relax => {
            let r =
                lp_relaxation_reference(&p, &solver).map_err(|e| Failure::at("relaxation", e))?;
            let best = p
                .best_response(&r.policy, &solver)
                .map_err(|e| Failure::at("best response", e))?;
            let kl = best.kl.as_f64();
            println!(
                "minimum agent task probability {:.6}; best-response kl {}; lower bound {}{}",
                r.min_agent_prob,
                kl,
                r.bernoulli_bound,
                if r.globally_optimal {
                    "; globally optimal"
                } else {
                    ""
                }
            );
            let report = json!({
                "method": "relax",
                "min_agent_prob": r.min_agent_prob,
                "sup_prob": r.sup_prob,
                "bernoulli_bound": kl_json(r.bernoulli_bound),
                "globally_optimal": r.globally_optimal,
                "best_response_kl": kl_json(kl),
                "best_response_kl_bits": kl_json(best.kl.bits()),
            });
            run.add(
                "report.json",
                serde_json::to_string_pretty(&report).expect("report serializes"),
            );
            config["method"] = json!("relax");
            r.policy
        }
        Method::Admm => {
            let res = admm_reference(&p, &admm_cfg).map_err(|e| Failure::at("admm", e))?;
            println!(
                "{} iterations ({}); best-response kl {}",
                res.history.len(),
                if res.converged {
                    "converged"
                } else {
                    "iteration limit"
                },
                res.best_response_kl
            );
            for d in &res.diagnostics {
                eprintln!("note: {d}");
            }
            run.add("history.csv", history_csv(&res.history));
            let report = json!({
                "method": "admm",
                "iterations": res.history.len(),
                "converged": res.converged,
                "best_response_kl": kl_json(res.best_response_kl),
                "diagnostics": res.diagnostics,
            });
            run.add(
                "report.json",
                serde_json::to_string_pretty(&report).expect("report serializes"),
            );
            config["method"] = json!("admm");
            config["admm"] = serde_json::to_value(admm_cfg).expect("config serializes");
            res.policy
        }
        Method::Ccp => {
            let source = a.agent.as_deref().expect("checked above");
            let agent_pi = load_policy(&mut run, &m, source)?;
            let agent_pi = lift(&m, &p, &dp, agent_pi)?;
            let x_agent = policy_to_residence_times(p.mdp(), &agent_pi, &p.product.s_d)
                .map_err(|e| Failure::at("agent residence", e))?;
            let init = match &a.init {
                Some(src) => {
                    let pi = load_policy(&mut run, &m, src)?;
                    lift(&m, &p, &dp, pi)?
                }
                None => p.product.reference.clone(),
            };
            let res = ccp_fixed_agent(&p, &x_agent, &init, &ccp_cfg)
                .map_err(|e| Failure::at("ccp", e))?;
            let last = res.trace.last().copied().unwrap_or(f64::NAN);
            println!("{} iterations; objective {last}", res.iterations);
            for f in &res.flags {
                eprintln!("note: {f}");
            }
            let mut trace = String::from("iteration,objective,surrogate\n");
            for (k, v) in res.trace.iter().enumerate() {
                let s = if k == 0 {
                    String::new()
                } else {
                    format!("{:.16e}", res.surrogate[k - 1])
                };
                trace.push_str(&format!("{k},{v:.16e},{s}\n"));
            }
            run.add("trace.csv", trace);
            let report = json!({
                "method": "ccp",
                "iterations": res.iterations,
                "converged": res.converged,
                "objective": kl_json(last),
                "flags": res.flags,
            });
            run.add(
                "report.json",
                serde_json::to_string_pretty(&report).expect("report serializes"),
            );
            config["method"] = json!("ccp");
            config["agent"] = json!(a.agent);
            config["init"] = json!(a.init);
            config["ccp"] = serde_json::to_value(ccp_cfg).expect("config serializes");
            res.policy
        }
    };
    if let Err(e) = p.audit(&policy) {
        eprintln!("note: {e}");
    }
    run.add("policy.json", p.policy_to_json(&policy));
    run.finish(&a.out, &config)
}

fn tag_summary(result: &ExperimentResult) -> Value {
    let rare = result.mean_loglik("rare");
    let mut tags: Vec<&str> = Vec::new();
    for r in &result.rows {
        if !tags.contains(&r.policy_tag.as_str()) {
            tags.push(&r.policy_tag);
        }
    }
    let mut closest: Option<(&str, f64)> = None;
    let per_tag: Vec<Value> = tags
        .iter()
        .map(|&t| {
            let ll = result.mean_loglik(t);
            let gap = match (ll, rare) {
                (Some(a), Some(b)) if t != "rare" => Some((a - b).abs()),
                _ => None,
            };
            if let Some(g) = gap {
                if closest.is_none_or(|(_, best)| g < best) {
                    closest = Some((t, g));
                }
            }
            json!({
                "policy_tag": t,
                "mean_loglik": ll,
                "mean_satisfaction": result.mean_satisfaction(t),
                "gap_to_rare": gap,
            })
        })
        .collect();
    json!({
        "policies": per_tag,
        "closest_to_rare": closest.map(|(t, _)| t),
        "candidate_kl": result.metadata.candidate_kl,
        "reference_satisfaction": result.metadata.reference_satisfaction,
    })
}

pub fn experiment(a: ExperimentArgs, detect: bool) -> CmdResult {
    let mut run = Run::new(if detect { "detect" } else { "simulate" });
    let text = run.read(&a.config)?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::usage(format!("config {}: {e}", a.config.display())))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let result = match &cfg.model {
        ModelSpec::Random(_) => run_detection_experiment(&cfg),
        ModelSpec::File {
            mdp,
            reference,
            formula,
        } => {
            let base = a.config.parent().unwrap_or(Path::new("."));
            let m = load_model(&mut run, &base.join(mdp))?;
            let ref_text = run.read(&base.join(reference))?;
            let pi = policy_from_json(&m, &ref_text).map_err(|e| Failure::at("load policy", e))?;
            let model = ExperimentModel {
                mdp: m,
                reference: pi,
                formula: formula.clone(),
            };
            run_detection_on(&model, &cfg)
        }
    }
    .map_err(|e| Failure::at("experiment", e))?;
    run.add("experiment.csv", experiment_csv(&result));
    if detect {
        let summary = tag_summary(&result);
        for p in summary["policies"].as_array().into_iter().flatten() {
            println!(
                "{:>5}: mean log-likelihood {}, satisfaction {}",
                p["policy_tag"].as_str().unwrap_or("?"),
                p["mean_loglik"],
                p["mean_satisfaction"]
            );
        }
        println!(
            "closest to the rare-event batches: {}",
            summary["closest_to_rare"]
        );
        run.add(
            "summary.json",
            serde_json::to_string_pretty(&summary).expect("summary serializes"),
        );
    } else {
        println!("{} batch rows", result.rows.len());
    }
    let config = serde_json::to_value(&cfg).expect("config serializes");
    run.finish(&a.out, &config)
}
