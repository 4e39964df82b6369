//! Multi-run adherence, its persistence, and the relational-pattern analyzer.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{EgtKind, EgtOrder};
use crate::kgdata::KnowledgeGraph;

/// Tolerance on the row sums of an adherence table.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Default minimum support for a mined composition rule.
pub const DEFAULT_MIN_SUPPORT: usize = 10;

/// Fraction of runs in which each relation selected each EGT.
///
/// Rows are indexed by relation id; columns use canonical EGT order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdherenceTable {
    pub rows: BTreeMap<usize, [f64; 4]>,
    pub n_runs: usize,
}

fn check_row(relation: &str, row: &[f64; 4]) -> Result<()> {
    if row.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Data(format!("adherence row for {relation} has entries outside [0, 1]: {row:?}")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::Data(format!("adherence row for {relation} sums to {sum}, not 1")));
    }
    Ok(())
}

impl AdherenceTable {
    /// Argmax EGT per relation, ties broken by `order`.
    pub fn argmax_selection(&self, order: EgtOrder) -> BTreeMap<usize, EgtKind> {
        self.rows.iter().map(|(&r, row)| (r, order.argmax(row))).collect()
    }

    /// One weight row per relation of `kg`, for building a frozen mask.
    /// Every relation of the graph must be present.
    pub fn weight_rows(&self, kg: &KnowledgeGraph) -> Result<Vec<[f64; 4]>> {
        if let Some(&extra) = self.rows.keys().find(|&&r| r >= kg.num_relations()) {
            return Err(Error::Data(format!("adherence table references unknown relation id {extra}")));
        }
        (0..kg.num_relations())
            .map(|r| {
                self.rows.get(&r).copied().ok_or_else(|| {
                    Error::Data(format!(
                        "adherence table has no row for relation {}",
                        kg.relation_label(r).unwrap_or("?")
                    ))
                })
            })
            .collect()
    }

    /// TSV with a run-count line, a header naming the EGT columns in `order`,
    /// and one row per relation. Values use the shortest exact float form.
    pub fn to_tsv(&self, kg: &KnowledgeGraph, order: EgtOrder) -> Result<String> {
        let mut out = format!("#n_runs\t{}\nrelation", self.n_runs);
        for kind in order.kinds() {
            out.push('\t');
            out.push_str(kind.name());
        }
        out.push('\n');
        for (&r, row) in &self.rows {
            let label = kg
                .relation_label(r)
                .ok_or_else(|| Error::Data(format!("adherence table references unknown relation id {r}")))?;
            out.push_str(label);
            for kind in order.kinds() {
                out.push_str(&format!("\t{}", row[kind.index()]));
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Parse [`AdherenceTable::to_tsv`] output. The header fixes the column
    /// order, so a table written under any EGT order reads back the same.
    pub fn from_tsv(text: &str, kg: &KnowledgeGraph, source: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty adherence file".into()))?;
        let n_runs = first
            .strip_prefix("#n_runs\t")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .ok_or_else(|| parse_err(1, format!("expected '#n_runs<TAB>count', got {first:?}")))?;
        let (_, header) = lines.next().ok_or_else(|| parse_err(2, "missing header".into()))?;
        let cols: Vec<&str> = header.split('\t').collect();
        if cols.len() != 5 || cols[0] != "relation" {
            return Err(parse_err(2, format!("bad header {header:?}")));
        }
        let kinds: Vec<EgtKind> = cols[1..]
            .iter()
            .map(|c| c.parse())
            .collect::<Result<_>>()
            .map_err(|e| parse_err(2, e.to_string()))?;
        let order = EgtOrder::new([kinds[0], kinds[1], kinds[2], kinds[3]]).map_err(|e| parse_err(2, e.to_string()))?;

        let mut rows = BTreeMap::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(parse_err(n, format!("expected 5 fields, found {}", fields.len())));
            }
            let r = kg
                .relation_id(fields[0])
                .ok_or_else(|| Error::Data(format!("adherence row {n} names unknown relation {:?}", fields[0])))?;
            let mut row = [0.0; 4];
            for (kind, field) in order.kinds().into_iter().zip(&fields[1..]) {
                row[kind.index()] = field
                    .parse()
                    .map_err(|_| parse_err(n, format!("bad fraction {field:?}")))?;
            }
            check_row(fields[0], &row)?;
            if rows.insert(r, row).is_some() {
                return Err(parse_err(n, format!("duplicate relation {:?}", fields[0])));
            }
        }
        Ok(Self { rows, n_runs })
    }
}

/// Aggregate per-run selections: `adh(r, τ) = #{runs selecting τ for r} / n`.
pub fn compute_adherence(run_selections: &[BTreeMap<usize, EgtKind>]) -> Result<AdherenceTable> {
    let first = run_selections
        .first()
        .ok_or_else(|| Error::Config("adherence needs at least one run".into()))?;
    let n = run_selections.len();
    let mut rows: BTreeMap<usize, [f64; 4]> = first.keys().map(|&r| (r, [0.0; 4])).collect();
    let mut counts: BTreeMap<usize, [usize; 4]> = first.keys().map(|&r| (r, [0; 4])).collect();
    for (i, run) in run_selections.iter().enumerate() {
        if run.len() != first.len() || run.keys().any(|r| !counts.contains_key(r)) {
            return Err(Error::Data(format!("run {i} covers a different relation set than run 0")));
        }
        for (r, kind) in run {
            counts.get_mut(r).expect("checked above")[kind.index()] += 1;
        }
    }
    for (r, c) in counts {
        rows.insert(r, c.map(|k| k as f64 / n as f64));
    }
    Ok(AdherenceTable { rows, n_runs: n })
}

pub fn save_adherence(path: impl AsRef<Path>, table: &AdherenceTable, kg: &KnowledgeGraph, order: EgtOrder) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, table.to_tsv(kg, order)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_adherence(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<AdherenceTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    AdherenceTable::from_tsv(&text, kg, path)
}

/// Observed relational patterns of one relation in the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternProfile {
    pub relation: usize,
    /// Fraction of distinct `(h, t)` pairs whose reverse `(t, h)` is also present.
    pub symmetry_score: f64,
    /// Other relations `r'` with `|{(h, t): (h, r, t), (t, r', h)}| / |pairs of r|`
    /// above zero.
    pub inversion_partners: BTreeMap<usize, f64>,
    /// Rules `r1 ∘ r2 → r3` concluding in this relation, as
    /// `(r1, r2, r3, support)` where support counts distinct `(x, z)` pairs.
    pub composition_hits: Vec<(usize, usize, usize, usize)>,
}

/// Profile every relation of the training split; composition rules need at
/// least `min_support` supporting pairs.
pub fn analyze_patterns(kg: &KnowledgeGraph, min_support: usize) -> Vec<PatternProfile> {
    let nr = kg.num_relations();
    let mut pairs: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); nr];
    let mut relations_of: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    let mut out_edges: HashMap<usize, Vec<(usize, usize)>> = HashMap::new();
    for t in kg.train() {
        if pairs[t.relation].insert((t.head, t.tail)) {
            relations_of.entry((t.head, t.tail)).or_default().push(t.relation);
            out_edges.entry(t.head).or_default().push((t.relation, t.tail));
        }
    }

    let mut profiles: Vec<PatternProfile> = (0..nr)
        .map(|r| {
            let own = &pairs[r];
            let total = own.len() as f64;
            let symmetric = own.iter().filter(|&&(h, t)| own.contains(&(t, h))).count();
            let mut inverse: BTreeMap<usize, usize> = BTreeMap::new();
            for &(h, t) in own {
                if let Some(rs) = relations_of.get(&(t, h)) {
                    for &other in rs.iter().filter(|&&o| o != r) {
                        *inverse.entry(other).or_default() += 1;
                    }
                }
            }
            PatternProfile {
                relation: r,
                symmetry_score: if own.is_empty() { 0.0 } else { symmetric as f64 / total },
                inversion_partners: inverse.into_iter().map(|(o, c)| (o, c as f64 / total)).collect(),
                composition_hits: Vec::new(),
            }
        })
        .collect();

    // Join r1 and r2 on the shared middle entity, then count the (x, z)
    // endpoints that a third relation connects directly.
    for (r1, own) in pairs.iter().enumerate() {
        let mut paths: BTreeMap<usize, HashSet<(usize, usize)>> = BTreeMap::new();
        for &(x, y) in own {
            for &(r2, z) in out_edges.get(&y).map(Vec::as_slice).unwrap_or(&[]) {
                paths.entry(r2).or_default().insert((x, z));
            }
        }
        for (r2, endpoints) in paths {
            if endpoints.len() < min_support {
                continue;
            }
            let mut support = vec![0usize; nr];
            for xz in &endpoints {
                for &r3 in relations_of.get(xz).map(Vec::as_slice).unwrap_or(&[]) {
                    support[r3] += 1;
                }
            }
            for (r3, &s) in support.iter().enumerate() {
                if s >= min_support.max(1) {
                    profiles[r3].composition_hits.push((r1, r2, r3, s));
                }
            }
        }
    }
    profiles
}

/// A symmetric relation that adhered to an EGT unable to model symmetry.
fn inconsistent(symmetry: f64, selected: EgtKind) -> bool {
    symmetry > 0.9 && matches!(selected, EgtKind::Trans | EgtKind::Scal)
}

/// Per-relation adherence percentages in `order`, with symmetry scores and an
/// inconsistency flag when `profiles` is non-empty. Returns `(tsv, markdown)`.
pub fn adherence_report(
    table: &AdherenceTable,
    profiles: &[PatternProfile],
    kg: &KnowledgeGraph,
    order: EgtOrder,
) -> (String, String) {
    let by_relation: BTreeMap<usize, &PatternProfile> = profiles.iter().map(|p| (p.relation, p)).collect();
    let with_patterns = !profiles.is_empty();
    let mut head: Vec<String> = vec!["relation".into()];
    head.extend(order.kinds().iter().map(|k| format!("{}_pct", k.name())));
    if with_patterns {
        head.push("symmetry".into());
        head.push("flag".into());
    }
    let mut tsv = head.join("\t") + "\n";
    let mut md = format!("| {} |\n|{}\n", head.join(" | "), "---|".repeat(head.len()));

    for (&r, row) in &table.rows {
        let label = kg.relation_label(r).map_or_else(|| format!("#{r}"), str::to_string);
        let mut cells = vec![label];
        cells.extend(order.kinds().iter().map(|k| format!("{:.1}", 100.0 * row[k.index()])));
        if with_patterns {
            match by_relation.get(&r) {
                Some(p) => {
                    cells.push(format!("{:.3}", p.symmetry_score));
                    let flag = inconsistent(p.symmetry_score, order.argmax(row));
                    cells.push(if flag { "SYMMETRY_MISMATCH".into() } else { String::new() });
                }
                None => cells.extend([String::new(), String::new()]),
            }
        }
        tsv.push_str(&cells.join("\t"));
        tsv.push('\n');
        md.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    (tsv, md)
}
