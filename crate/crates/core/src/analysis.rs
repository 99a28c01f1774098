//! Trajectory analytics: stage-normalized tool-usage profiles and action
//! transition matrices, with CSV and SVG output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::agent::{read_log, TerminalReason, Trajectory};

pub const DEFAULT_STAGES: usize = 6;
pub const MAX_CORRUPT_FRACTION: f64 = 0.10;
pub const LABELS: [&str; 7] = ["ViewStruct", "ViewDetail", "SemSearch", "TypeLookup", "Execute", "Submit", "invalid"];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no trajectories to analyze")]
    Empty,
    #[error("stage count must be at least 1")]
    NoStages,
    #[error("action label `{0}` is not in the label order")]
    UnknownLabel(String),
    #[error("label order repeats `{0}`")]
    DuplicateLabel(String),
    #[error("{corrupt} of {total} log lines are corrupt (more than 10%)")]
    TooCorrupt { corrupt: usize, total: usize },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnalysisError + '_ {
    move |source| AnalysisError::Io { path: path.display().to_string(), source }
}

/// Which trajectories enter an analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    All,
    /// Ended by a passing Submit and accepted by the private tests.
    SuccessOnly,
}

pub fn select(trajectories: &[Trajectory], selection: Selection) -> Vec<&Trajectory> {
    trajectories
        .iter()
        .filter(|t| match selection {
            Selection::All => true,
            Selection::SuccessOnly => t.terminal_reason == TerminalReason::SubmitPass && t.accepted == Some(true),
        })
        .collect()
}

/// Loaded log plus the number of skipped corrupt lines.
pub struct LoadedLog {
    pub trajectories: Vec<Trajectory>,
    pub corrupt_lines: usize,
}

/// Reads a trajectory log, skipping corrupt lines unless more than 10% are.
pub fn load_log(path: &Path) -> Result<LoadedLog, AnalysisError> {
    let contents = read_log(path).map_err(io_err(path))?;
    if contents.total_lines > 0 && contents.corrupt_lines as f64 > MAX_CORRUPT_FRACTION * contents.total_lines as f64 {
        return Err(AnalysisError::TooCorrupt { corrupt: contents.corrupt_lines, total: contents.total_lines });
    }
    if contents.corrupt_lines > 0 {
        tracing::warn!(corrupt = contents.corrupt_lines, "skipped corrupt trajectory log lines");
    }
    Ok(LoadedLog { trajectories: contents.trajectories, corrupt_lines: contents.corrupt_lines })
}

/// Checks a custom label order: no repeats.
pub fn label_order(labels: &[String]) -> Result<Vec<String>, AnalysisError> {
    let mut out: Vec<String> = Vec::with_capacity(labels.len());
    for l in labels {
        if out.contains(l) {
            return Err(AnalysisError::DuplicateLabel(l.clone()));
        }
        out.push(l.clone());
    }
    Ok(out)
}

pub fn default_labels() -> Vec<String> {
    LABELS.iter().map(|s| s.to_string()).collect()
}

fn position(labels: &[String], label: &str) -> Result<usize, AnalysisError> {
    labels.iter().position(|l| l == label).ok_or_else(|| AnalysisError::UnknownLabel(label.to_string()))
}

/// Stage of action `i` in a trajectory of `len` actions.
pub fn stage_of(i: usize, num_stages: usize, len: usize) -> usize {
    i * num_stages / len
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageProfile {
    pub labels: Vec<String>,
    /// `counts[stage][label]`.
    pub counts: Vec<Vec<u64>>,
    pub skipped_empty: usize,
}

impl StageProfile {
    pub fn num_stages(&self) -> usize {
        self.counts.len()
    }

    pub fn stage_total(&self, stage: usize) -> u64 {
        self.counts[stage].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Per-label fractions of a stage; all zero for an empty stage.
    pub fn normalized(&self, stage: usize) -> Vec<f64> {
        let total = self.stage_total(stage);
        self.counts[stage].iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect()
    }
}

/// Aggregates per-stage invocation counts over action-label sequences.
pub fn stage_profile_of<S: AsRef<str>>(
    sequences: &[Vec<S>],
    num_stages: usize,
    labels: &[String],
) -> Result<StageProfile, AnalysisError> {
    if num_stages == 0 {
        return Err(AnalysisError::NoStages);
    }
    if sequences.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut profile =
        StageProfile { labels: labels.to_vec(), counts: vec![vec![0; labels.len()]; num_stages], skipped_empty: 0 };
    for seq in sequences {
        if seq.is_empty() {
            profile.skipped_empty += 1;
            continue;
        }
        for (i, label) in seq.iter().enumerate() {
            let col = position(labels, label.as_ref())?;
            profile.counts[stage_of(i, num_stages, seq.len())][col] += 1;
        }
    }
    if profile.skipped_empty > 0 {
        tracing::warn!(skipped = profile.skipped_empty, "skipped trajectories without actions");
    }
    Ok(profile)
}

pub fn stage_profile(
    trajectories: &[&Trajectory],
    num_stages: usize,
    labels: &[String],
) -> Result<StageProfile, AnalysisError> {
    let seqs: Vec<Vec<&str>> = trajectories.iter().map(|t| t.labels()).collect();
    stage_profile_of(&seqs, num_stages, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub labels: Vec<String>,
    /// `counts[from][to]`.
    pub counts: Vec<Vec<u64>>,
    pub probabilities: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Counts adjacent action pairs pooled over all sequences, then
/// row-normalizes.
pub fn transition_matrix_of<S: AsRef<str>>(
    sequences: &[Vec<S>],
    labels: &[String],
) -> Result<TransitionMatrix, AnalysisError> {
    if sequences.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let n = labels.len();
    let mut counts = vec![vec![0u64; n]; n];
    for seq in sequences {
        let cols = seq.iter().map(|l| position(labels, l.as_ref())).collect::<Result<Vec<_>, _>>()?;
        for pair in cols.windows(2) {
            counts[pair[0]][pair[1]] += 1;
        }
    }
    let probabilities = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            row.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect()
        })
        .collect();
    Ok(TransitionMatrix { labels: labels.to_vec(), counts, probabilities })
}

pub fn transition_matrix(trajectories: &[&Trajectory], labels: &[String]) -> Result<TransitionMatrix, AnalysisError> {
    let seqs: Vec<Vec<&str>> = trajectories.iter().map(|t| t.labels()).collect();
    transition_matrix_of(&seqs, labels)
}

/// Profile CSV: `stage,total`, one count column per label, then one
/// `<label>_frac` column per label.
pub fn profile_csv(profile: &StageProfile) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["stage".to_string(), "total".to_string()];
    header.extend(profile.labels.iter().cloned());
    header.extend(profile.labels.iter().map(|l| format!("{l}_frac")));
    w.write_record(&header)?;
    for stage in 0..profile.num_stages() {
        let mut row = vec![stage.to_string(), profile.stage_total(stage).to_string()];
        row.extend(profile.counts[stage].iter().map(u64::to_string));
        row.extend(profile.normalized(stage).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    finish(w)
}

/// Transition CSV in long form: `from,to,count,probability`, rows in label
/// order.
pub fn transition_csv(matrix: &TransitionMatrix) -> Result<String, AnalysisError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["from", "to", "count", "probability"])?;
    for (i, from) in matrix.labels.iter().enumerate() {
        for (j, to) in matrix.labels.iter().enumerate() {
            w.write_record([
                from.as_str(),
                to.as_str(),
                &matrix.counts[i][j].to_string(),
                &matrix.probabilities[i][j].to_string(),
            ])?;
        }
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, AnalysisError> {
    let bytes = w.into_inner().map_err(|e| AnalysisError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#9c755f"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Stacked-area chart of per-stage tool fractions.
pub fn profile_svg(profile: &StageProfile) -> String {
    let (w, h, left, top, plot_w, plot_h) = (720.0, 400.0, 50.0, 20.0, 500.0, 330.0);
    let stages = profile.num_stages();
    let x = |s: usize| {
        if stages == 1 {
            left + plot_w / 2.0
        } else {
            left + plot_w * s as f64 / (stages - 1) as f64
        }
    };
    let y = |v: f64| top + plot_h * (1.0 - v);
    let fractions: Vec<Vec<f64>> = (0..stages).map(|s| profile.normalized(s)).collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let mut lower = vec![0.0; stages];
    for (li, label) in profile.labels.iter().enumerate() {
        let upper: Vec<f64> = (0..stages).map(|s| lower[s] + fractions[s][li]).collect();
        let mut points = String::new();
        for (s, u) in upper.iter().enumerate() {
            let _ = write!(points, "{:.2},{:.2} ", x(s), y(*u));
        }
        for s in (0..stages).rev() {
            let _ = write!(points, "{:.2},{:.2} ", x(s), y(lower[s]));
        }
        let _ = writeln!(
            svg,
            "  <polygon points=\"{}\" fill=\"{}\" stroke=\"none\"><title>{}</title></polygon>",
            points.trim_end(),
            PALETTE[li % PALETTE.len()],
            xml_escape(label)
        );
        let _ = writeln!(
            svg,
            "  <rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>",
            left + plot_w + 30.0,
            top + 20.0 * li as f64,
            PALETTE[li % PALETTE.len()],
            left + plot_w + 48.0,
            top + 20.0 * li as f64 + 10.0,
            xml_escape(label)
        );
        lower = upper;
    }
    let _ = writeln!(
        svg,
        "  <line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        top + plot_h,
        left + plot_w,
        top + plot_h
    );
    for s in 0..stages {
        let _ = writeln!(
            svg,
            "  <text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            x(s),
            top + plot_h + 18.0,
            s + 1
        );
    }
    let _ =
        writeln!(svg, "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">stage</text>", left + plot_w / 2.0, h - 10.0);
    svg.push_str("</svg>\n");
    svg
}

/// Heatmap of transition probabilities, rows = from, columns = to.
pub fn transition_svg(matrix: &TransitionMatrix) -> String {
    let n = matrix.labels.len();
    let (cell, left, top) = (60.0, 100.0, 100.0);
    let size = left + cell * n as f64 + 20.0;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    for (i, label) in matrix.labels.iter().enumerate() {
        let _ = writeln!(
            svg,
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            left - 6.0,
            top + cell * i as f64 + cell / 2.0 + 4.0,
            xml_escape(label)
        );
        let cx = left + cell * i as f64 + cell / 2.0;
        let _ = writeln!(
            svg,
            "  <text x=\"{cx}\" y=\"{}\" text-anchor=\"start\" transform=\"rotate(-45 {cx} {})\">{}</text>",
            top - 8.0,
            top - 8.0,
            xml_escape(label)
        );
    }
    for i in 0..n {
        for j in 0..n {
            let p = matrix.probabilities[i][j];
            let shade = (255.0 * (1.0 - p)).round() as u8;
            let (x, y) = (left + cell * j as f64, top + cell * i as f64);
            let _ = writeln!(
                svg,
                "  <rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},255)\" stroke=\"white\"/>"
            );
            let ink = if p > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                svg,
                "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{ink}\">{p:.2}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Paths written by [`emit_all`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emitted {
    pub profile_csv: std::path::PathBuf,
    pub transitions_csv: std::path::PathBuf,
    pub profile_svg: std::path::PathBuf,
    pub transitions_svg: std::path::PathBuf,
}

pub fn emit_all(out_dir: &Path, profile: &StageProfile, matrix: &TransitionMatrix) -> Result<Emitted, AnalysisError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let emitted = Emitted {
        profile_csv: out_dir.join("stage_profile.csv"),
        transitions_csv: out_dir.join("transitions.csv"),
        profile_svg: out_dir.join("stage_profile.svg"),
        transitions_svg: out_dir.join("transitions.svg"),
    };
    let write = |path: &Path, text: String| fs::write(path, text).map_err(io_err(path));
    write(&emitted.profile_csv, profile_csv(profile)?)?;
    write(&emitted.transitions_csv, transition_csv(matrix)?)?;
    write(&emitted.profile_svg, profile_svg(profile))?;
    write(&emitted.transitions_svg, transition_svg(matrix))?;
    Ok(emitted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<String> {
        default_labels()
    }

    #[test]
    fn twelve_actions_six_stages() {
        let seq: Vec<&str> = ["ViewStruct", "SemSearch"].repeat(6);
        let p = stage_profile_of(&[seq], 6, &labels()).unwrap();
        assert!((0..6).all(|s| p.stage_total(s) == 2));
        assert_eq!(p.total(), 12);
    }

    #[test]
    fn short_trajectories_spread_out() {
        let p = stage_profile_of(&[vec!["ViewStruct", "ViewDetail", "Submit"]], 6, &labels()).unwrap();
        let totals: Vec<u64> = (0..6).map(|s| p.stage_total(s)).collect();
        assert_eq!(totals, vec![1, 0, 1, 0, 1, 0]);
        assert_eq!(p.normalized(1), vec![0.0; 7]);
    }

    #[test]
    fn empty_sequences_are_skipped() {
        let p = stage_profile_of(&[vec![], vec!["Submit"]], 6, &labels()).unwrap();
        assert_eq!(p.skipped_empty, 1);
        assert_eq!(p.total(), 1);
        assert!(matches!(stage_profile_of::<&str>(&[], 6, &labels()), Err(AnalysisError::Empty)));
        assert!(matches!(stage_profile_of(&[vec!["Submit"]], 0, &labels()), Err(AnalysisError::NoStages)));
    }

    #[test]
    fn transitions_by_hand() {
        let m =
            transition_matrix_of(&[vec!["ViewStruct", "ViewDetail", "ViewStruct", "ViewDetail"]], &labels()).unwrap();
        assert_eq!(m.counts[0][1], 2);
        assert_eq!(m.counts[1][0], 1);
        assert_eq!(m.probabilities[0][1], 1.0);
        assert_eq!(m.total(), 3);
        let single = transition_matrix_of(&[vec!["Submit"]], &labels()).unwrap();
        assert_eq!(single.total(), 0);
        assert!(single.probabilities.iter().flatten().all(|p| *p == 0.0));
    }

    #[test]
    fn unknown_label_is_an_error() {
        assert!(matches!(
            transition_matrix_of(&[vec!["Foo"]], &labels()),
            Err(AnalysisError::UnknownLabel(l)) if l == "Foo"
        ));
        assert!(label_order(&["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn csv_shape_and_determinism() {
        let seq: Vec<&str> = ["ViewStruct", "SemSearch"].repeat(6);
        let p = stage_profile_of(std::slice::from_ref(&seq), 6, &labels()).unwrap();
        let csv = profile_csv(&p).unwrap();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with("stage,total,ViewStruct,ViewDetail,SemSearch,TypeLookup,Execute,Submit,invalid,"));
        assert_eq!(csv, profile_csv(&p).unwrap());
        let m = transition_matrix_of(&[seq], &labels()).unwrap();
        assert_eq!(transition_csv(&m).unwrap().lines().count(), 1 + 49);
        assert!(profile_svg(&p).starts_with("<svg"));
        assert!(transition_svg(&m).contains("<rect"));
    }
}
