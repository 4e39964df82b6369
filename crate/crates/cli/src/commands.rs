use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use smartkge::analysis::{adherence_report, analyze_patterns, compute_adherence, load_adherence, save_adherence};
use smartkge::evaluation::evaluate;
use smartkge::model::{load_checkpoint, save_checkpoint};
use smartkge::training::run_smart;
use smartkge::{AdherenceTable, Error, KnowledgeGraph, MetricsReport, PatternProfile, Result, SmartOutcome, Split};

use crate::config::ExperimentConfig;
use crate::summary::Summary;

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        context: format!("writing {}", path.display()),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        context: format!("creating {}", path.display()),
        source,
    })
}

fn load_kg(config: &ExperimentConfig) -> Result<KnowledgeGraph> {
    let (train, valid, test) = config.dataset_paths()?;
    KnowledgeGraph::load_dataset(train, valid, test)
}

fn load_preloaded(config: &ExperimentConfig, kg: &KnowledgeGraph) -> Result<Option<AdherenceTable>> {
    config.adherence_in.as_deref().map(|p| load_adherence(p, kg)).transpose()
}

fn metrics_tsv(m: &MetricsReport, variant: &str, phase: &str, dim: usize) -> String {
    format!("{}\n{}\n", MetricsReport::TSV_HEADER, m.tsv_row(variant, phase, dim))
}

fn phases_tsv(outcome: &SmartOutcome) -> String {
    let mut out = String::from("phase\tsteps_run\tbest_valid_mrr\tbest_step\tstopped_early\tskipped\n");
    for r in &outcome.reports {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.phase, r.steps_run, r.best_valid_mrr, r.best_step, r.stopped_early, r.skipped
        ));
    }
    out
}

fn selections_tsv(outcome: &SmartOutcome, kg: &KnowledgeGraph) -> String {
    let mut out = String::from("relation\tselected\n");
    for (r, kind) in outcome.selections.iter().enumerate() {
        out.push_str(&format!("{}\t{}\n", kg.relation_label(r).unwrap_or("?"), kind));
    }
    out
}

fn patterns_tsv(profiles: &[PatternProfile], kg: &KnowledgeGraph) -> String {
    let label = |r: usize| kg.relation_label(r).unwrap_or("?").to_string();
    let mut out = String::from("relation\tsymmetry\tinversion_partners\tcomposition_hits\n");
    for p in profiles {
        let inv: Vec<String> = p
            .inversion_partners
            .iter()
            .map(|(&r, f)| format!("{}={f}", label(r)))
            .collect();
        let comp: Vec<String> = p
            .composition_hits
            .iter()
            .map(|&(a, b, _, s)| format!("{}*{}={s}", label(a), label(b)))
            .collect();
        out.push_str(&format!("{}\t{}\t{}\t{}\n", label(p.relation), p.symmetry_score, inv.join(";"), comp.join(";")));
    }
    out
}

/// Result of [`cmd_train`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub outcomes: Vec<SmartOutcome>,
    pub adherence: AdherenceTable,
    pub summary: Summary,
}

/// `runs` independent pipelines with seeds `seed, seed + 1, ...`.
///
/// Writes to `out_dir`: `run_<i>/` with the checkpoint, phase logs,
/// metrics and per-relation selections; `adherence.tsv` and an adherence
/// report cross-checked against the training patterns; `summary.tsv` and
/// `summary.md`.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainOutput> {
    config.validate()?;
    let kg = load_kg(config)?;
    if kg.test().is_empty() {
        return Err(Error::Data("the test split is empty".into()));
    }
    let preloaded = load_preloaded(config, &kg)?;
    create_dir(&config.out_dir)?;

    let outcomes: Vec<SmartOutcome> = (0..config.runs)
        .into_par_iter()
        .map(|i| {
            let mut model = config.model.clone();
            model.seed = config.model.seed + i as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
            run_smart(&kg, &model, &mut rng, preloaded.as_ref())
        })
        .collect::<Result<_>>()?;

    let variant = config.model.variant.name();
    let dim = config.model.dim;
    let mut reports = Vec::with_capacity(outcomes.len());
    let mut selections = Vec::with_capacity(outcomes.len());
    for (i, outcome) in outcomes.iter().enumerate() {
        let dir = config.out_dir.join(format!("run_{i}"));
        create_dir(&dir)?;
        save_checkpoint(dir.join("checkpoint.bin"), &outcome.state, &outcome.att)?;
        for report in &outcome.reports {
            write(&dir.join(format!("log_{}.tsv", report.phase)), &report.log_tsv())?;
        }
        write(&dir.join("phases.tsv"), &phases_tsv(outcome))?;
        write(&dir.join("selections.tsv"), &selections_tsv(outcome, &kg))?;
        let metrics = outcome.test_metrics.expect("test split is non-empty");
        write(
            &dir.join("metrics.tsv"),
            &metrics_tsv(&metrics, variant, outcome.selected_phase.model_name(), dim),
        )?;
        reports.push(metrics);
        selections.push(outcome.selections.iter().copied().enumerate().collect::<BTreeMap<_, _>>());
    }

    let adherence = compute_adherence(&selections)?;
    let order = config.model.egt_order;
    save_adherence(config.out_dir.join("adherence.tsv"), &adherence, &kg, order)?;
    if let Some(path) = &config.adherence_out {
        save_adherence(path, &adherence, &kg, order)?;
    }
    let profiles = analyze_patterns(&kg, smartkge::analysis::DEFAULT_MIN_SUPPORT);
    let (tsv, md) = adherence_report(&adherence, &profiles, &kg, order);
    write(&config.out_dir.join("adherence_report.tsv"), &tsv)?;
    write(&config.out_dir.join("adherence_report.md"), &md)?;

    let summary = Summary::from_reports(variant, dim, &reports)?;
    write(&config.out_dir.join("summary.tsv"), &summary.to_tsv())?;
    write(&config.out_dir.join("summary.md"), &summary.to_markdown())?;
    Ok(TrainOutput {
        outcomes,
        adherence,
        summary,
    })
}

/// One trained grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub assignments: Vec<(String, String)>,
    /// Validation MRR of the model the cell returned.
    pub valid_mrr: f64,
    pub test: MetricsReport,
}

/// Train one seed per cell of the grid's Cartesian product.
///
/// Writes `grid.tsv` with one row per cell, `best_cell.tsv` with the cell of
/// highest validation MRR (earliest cell on ties), and per-cell checkpoints
/// under `cell_<i>/`. Returns the cells in grid order.
pub fn cmd_grid(config: &ExperimentConfig) -> Result<Vec<GridCell>> {
    config.validate()?;
    if config.grid.is_empty() {
        return Err(Error::Config("grid search needs at least one grid axis".into()));
    }
    let kg = load_kg(config)?;
    if kg.test().is_empty() {
        return Err(Error::Data("the test split is empty".into()));
    }
    let preloaded = load_preloaded(config, &kg)?;
    create_dir(&config.out_dir)?;
    let cells = config.grid_cells();

    let trained: Vec<(GridCell, SmartOutcome)> = cells
        .into_par_iter()
        .map(|assignments| {
            let mut cell_config = config.clone();
            for (k, v) in &assignments {
                cell_config.set(k, v)?;
            }
            cell_config.validate()?;
            let model = &cell_config.model;
            let outcome = run_smart(&kg, model, &mut ChaCha8Rng::seed_from_u64(model.seed), preloaded.as_ref())?;
            let valid_mrr = evaluate(&outcome.state, &outcome.att, &kg, kg.valid(), model.norm)?.mrr;
            let test = outcome.test_metrics.expect("test split is non-empty");
            Ok((
                GridCell {
                    assignments,
                    valid_mrr,
                    test,
                },
                outcome,
            ))
        })
        .collect::<Result<_>>()?;

    let axes: Vec<&String> = config.grid.keys().collect();
    let header = {
        let mut h: Vec<String> = vec!["cell".into()];
        h.extend(axes.iter().map(|a| a.to_string()));
        h.extend(["valid_mrr", "mrr_x1000", "h1", "h3", "h10"].map(String::from));
        h.join("\t")
    };
    let row = |i: usize, cell: &GridCell| {
        let mut r: Vec<String> = vec![i.to_string()];
        r.extend(cell.assignments.iter().map(|(_, v)| v.clone()));
        r.extend(crate::summary::scaled_metrics(&cell.test).iter().map(|(_, v)| v.to_string()));
        r.insert(1 + axes.len(), cell.valid_mrr.to_string());
        r.join("\t")
    };
    let mut table = header.clone() + "\n";
    let mut best = 0;
    for (i, (cell, outcome)) in trained.iter().enumerate() {
        table.push_str(&row(i, cell));
        table.push('\n');
        if cell.valid_mrr > trained[best].0.valid_mrr {
            best = i;
        }
        let dir = config.out_dir.join(format!("cell_{i}"));
        create_dir(&dir)?;
        save_checkpoint(dir.join("checkpoint.bin"), &outcome.state, &outcome.att)?;
        write(&dir.join("phases.tsv"), &phases_tsv(outcome))?;
    }
    write(&config.out_dir.join("grid.tsv"), &table)?;
    write(
        &config.out_dir.join("best_cell.tsv"),
        &format!("{header}\n{}\n", row(best, &trained[best].0)),
    )?;
    Ok(trained.into_iter().map(|(cell, _)| cell).collect())
}

/// Filtered metrics of a saved checkpoint on one split of the configured
/// dataset.
pub fn cmd_eval(checkpoint: &Path, config: &ExperimentConfig, split: Split) -> Result<MetricsReport> {
    let kg = load_kg(config)?;
    let (state, att) = load_checkpoint(checkpoint)?;
    for (what, expected, found) in [
        ("entities", kg.num_entities(), state.num_entities),
        ("relations", kg.num_relations(), state.num_relations),
    ] {
        if expected != found {
            return Err(Error::VocabMismatch { what, expected, found });
        }
    }
    let triples = kg.split(split);
    if triples.is_empty() {
        return Err(Error::Data(format!("the {split:?} split is empty")));
    }
    evaluate(&state, &att, &kg, triples, config.model.norm)
}

/// Pattern profiles of the training split, plus an adherence report when
/// `adherence_in` is set. Writes `patterns.tsv` and, with adherence,
/// `adherence_report.tsv` / `.md`; returns the patterns TSV.
pub fn cmd_analyze(config: &ExperimentConfig, min_support: usize) -> Result<String> {
    let kg = load_kg(config)?;
    create_dir(&config.out_dir)?;
    let profiles = analyze_patterns(&kg, min_support);
    let tsv = patterns_tsv(&profiles, &kg);
    write(&config.out_dir.join("patterns.tsv"), &tsv)?;
    if let Some(table) = load_preloaded(config, &kg)? {
        let (rt, md) = adherence_report(&table, &profiles, &kg, config.model.egt_order);
        write(&config.out_dir.join("adherence_report.tsv"), &rt)?;
        write(&config.out_dir.join("adherence_report.md"), &md)?;
    }
    Ok(tsv)
}
