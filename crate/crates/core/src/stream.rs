//! Synthetic drifting streams, table ingestion and the labeling oracle.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::types::{LabeledSample, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Every context shares one label set.
    DomainIL,
    /// Contexts may carry different label sets.
    ClassIL,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "domain" | "domainil" | "domain-il" => Ok(Scenario::DomainIL),
            "class" | "classil" | "class-il" => Ok(Scenario::ClassIL),
            _ => Err(Error::Config(format!("unknown scenario {s:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::DomainIL => "domain",
            Scenario::ClassIL => "class",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub n_contexts: usize,
    /// Order in which contexts appear in the stream.
    pub context_order: Vec<usize>,
    pub samples_per_context: usize,
    pub base_size: usize,
    pub val_per_context: usize,
    pub test_per_context: usize,
    /// Domain-IL: number of shared classes.
    pub n_classes: usize,
    /// Class-IL: labels per context id. Empty means context `c` carries
    /// labels `c` and `c + 1`.
    pub class_lists: Vec<Vec<usize>>,
    pub feature_dim: usize,
    pub context_shift: f64,
    pub class_sep: f64,
    pub noise_std: f64,
    pub scenario: Scenario,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            n_contexts: 5,
            context_order: vec![0, 3, 1, 2, 4],
            samples_per_context: 400,
            base_size: 150,
            val_per_context: 100,
            test_per_context: 150,
            n_classes: 3,
            class_lists: Vec::new(),
            feature_dim: 8,
            context_shift: 4.0,
            class_sep: 3.0,
            noise_std: 0.7,
            scenario: Scenario::DomainIL,
            seed: 0,
        }
    }
}

impl StreamConfig {
    /// Labels carried by context id `c`.
    pub fn classes_of(&self, c: usize) -> Vec<usize> {
        match self.scenario {
            Scenario::DomainIL => (0..self.n_classes).collect(),
            Scenario::ClassIL if self.class_lists.is_empty() => vec![c, c + 1],
            Scenario::ClassIL => self.class_lists[c].clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_contexts == 0 || self.feature_dim == 0 {
            return bad("n_contexts and feature_dim must be positive".into());
        }
        let mut sorted = self.context_order.clone();
        sorted.sort_unstable();
        if sorted != (0..self.n_contexts).collect::<Vec<_>>() {
            return bad(format!("context_order {:?} is not a permutation of 0..{}", self.context_order, self.n_contexts));
        }
        if self.samples_per_context == 0 || self.base_size == 0 || self.test_per_context == 0 {
            return bad("stream, base and test sizes must be positive".into());
        }
        if !(self.noise_std >= 0.0) || !self.context_shift.is_finite() || !self.class_sep.is_finite() {
            return bad("noise_std must be non-negative and shifts finite".into());
        }
        match self.scenario {
            Scenario::DomainIL if self.n_classes == 0 => return bad("n_classes must be positive".into()),
            Scenario::ClassIL if !self.class_lists.is_empty() && self.class_lists.len() != self.n_contexts => {
                return bad("class_lists needs one list per context".into())
            }
            _ => {}
        }
        for c in 0..self.n_contexts {
            let cls = self.classes_of(c);
            if cls.is_empty() {
                return bad(format!("context {c} has no classes"));
            }
            if let Some(&y) = cls.iter().find(|&&y| y >= self.feature_dim) {
                return bad(format!("class {y} needs feature_dim > {y}"));
            }
        }
        Ok(())
    }
}

/// A stream split into its parts. `val` and `test` are indexed by position
/// in the stream order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamData<T> {
    pub base: Vec<LabeledSample<T>>,
    pub stream: Vec<Sample<T>>,
    pub val: Vec<Vec<Sample<T>>>,
    pub test: Vec<Vec<Sample<T>>>,
    /// Context ids in stream order.
    pub context_order: Vec<usize>,
}

impl<T: Real> StreamData<T> {
    pub fn n_contexts(&self) -> usize {
        self.context_order.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.stream
            .first()
            .or_else(|| self.base.first().map(|l| &l.sample))
            .map(|s| s.features.len())
            .unwrap_or(0)
    }

    /// Stream indices where each context after the first begins.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for w in self.stream.windows(2) {
            if w[0].context_tag != w[1].context_tag {
                out.push(w[1].stream_index);
            }
        }
        out
    }

    /// Union of labels seen anywhere in the data, ascending.
    pub fn all_classes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .base
            .iter()
            .map(|l| l.sample.true_label)
            .chain(self.stream.iter().map(|s| s.true_label))
            .chain(self.test.iter().flatten().map(|s| s.true_label))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Reveals the hidden label; annotation time is `now`.
pub fn oracle_label<T: Real>(sample: &Sample<T>, now: usize) -> LabeledSample<T> {
    LabeledSample {
        sample: sample.clone(),
        label: sample.true_label,
        annotation_time: now,
    }
}

struct Generator<'a> {
    cfg: &'a StreamConfig,
    directions: Vec<Vec<f64>>,
    rng: RngStream,
    next_id: u64,
}

impl Generator<'_> {
    fn draw<T: Real>(&mut self, context: usize, stream_index: usize) -> Sample<T> {
        let classes = self.cfg.classes_of(context);
        let label = classes[self.rng.below(classes.len())];
        let features = (0..self.cfg.feature_dim)
            .map(|i| {
                let class_part = if i == label { self.cfg.class_sep } else { 0.0 };
                let mean = class_part + self.cfg.context_shift * self.directions[context][i];
                T::lit(mean + self.cfg.noise_std * self.rng.gaussian())
            })
            .collect();
        let id = self.next_id;
        self.next_id += 1;
        Sample {
            id,
            features,
            true_label: label,
            context_tag: context,
            stream_index,
        }
    }
}

/// Draws a stream: per context `c` and class `y`, features are Gaussian
/// around `class_sep * e_y + context_shift * v_c` where `v_c` is a fixed
/// random unit direction.
pub fn generate<T: Real>(cfg: &StreamConfig) -> Result<StreamData<T>> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let mut dir_rng = root.derive("directions");
    let directions = (0..cfg.n_contexts)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.feature_dim).map(|_| dir_rng.gaussian()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut g = Generator {
        cfg,
        directions,
        rng: root.derive("samples"),
        next_id: 0,
    };

    let first = cfg.context_order[0];
    let base = (0..cfg.base_size)
        .map(|_| oracle_label(&g.draw::<T>(first, 0), 0))
        .collect();
    let mut stream = Vec::with_capacity(cfg.n_contexts * cfg.samples_per_context);
    for &c in &cfg.context_order {
        for _ in 0..cfg.samples_per_context {
            let idx = stream.len();
            stream.push(g.draw(c, idx));
        }
    }
    let mut val = Vec::new();
    let mut test = Vec::new();
    for &c in &cfg.context_order {
        val.push((0..cfg.val_per_context).map(|_| g.draw(c, 0)).collect());
        test.push((0..cfg.test_per_context).map(|_| g.draw(c, 0)).collect());
    }
    Ok(StreamData {
        base,
        stream,
        val,
        test,
        context_order: cfg.context_order.clone(),
    })
}

pub const TABLE_HEADER_PREFIX: &str = "id,context,label";

/// Reads `id,context,label,f0,...` rows. `stream_index` is the row order.
pub fn load_table<T: Real>(path: &Path) -> Result<Vec<Sample<T>>> {
    let file = File::open(path)?;
    read_table(BufReader::new(file), path)
}

pub fn read_table<T: Real, R: BufRead>(r: R, path: &Path) -> Result<Vec<Sample<T>>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = r.lines().enumerate();
    let dim = match lines.next() {
        Some((_, header)) => {
            let header = header?;
            let cols: Vec<&str> = header.trim().split(',').collect();
            if cols.len() < 4 || cols[..3] != ["id", "context", "label"] {
                return Err(err(1, format!("header must start with {TABLE_HEADER_PREFIX},f0")));
            }
            for (i, c) in cols[3..].iter().enumerate() {
                if *c != format!("f{i}") {
                    return Err(err(1, format!("expected column f{i}, found {c:?}")));
                }
            }
            cols.len() - 3
        }
        None => return Err(err(1, "empty file".into())),
    };
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 3 {
            return Err(err(lineno, format!("expected {} columns, found {}", dim + 3, fields.len())));
        }
        let int = |s: &str, what: &str| s.parse::<u64>().map_err(|_| err(lineno, format!("bad {what} {s:?}")));
        let id = int(fields[0], "id")?;
        let context = int(fields[1], "context")? as usize;
        let label = int(fields[2], "label")? as usize;
        let features = fields[3..]
            .iter()
            .map(|f| f.parse::<T>().map_err(|_| err(lineno, format!("non-numeric feature {f:?}"))))
            .collect::<Result<Vec<T>>>()?;
        out.push(Sample {
            id,
            features,
            true_label: label,
            context_tag: context,
            stream_index: out.len(),
        });
    }
    Ok(out)
}

pub fn write_table<T: Real, W: Write>(samples: &[Sample<T>], mut w: W) -> Result<()> {
    let dim = samples.first().map(|s| s.features.len()).unwrap_or(0);
    let cols: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    writeln!(w, "{TABLE_HEADER_PREFIX},{}", cols.join(","))?;
    for s in samples {
        let f: Vec<String> = s.features.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{},{},{},{}", s.id, s.context_tag, s.true_label, f.join(","))?;
    }
    Ok(())
}

/// Writes `base.csv`, `stream.csv`, `val.csv` and `test.csv` into `dir`.
pub fn export_dir<T: Real>(data: &StreamData<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let write = |name: &str, samples: Vec<Sample<T>>| -> Result<()> {
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        write_table(&samples, &mut w)?;
        w.flush()?;
        Ok(())
    };
    write("base.csv", data.base.iter().map(|l| l.sample.clone()).collect())?;
    write("stream.csv", data.stream.clone())?;
    write("val.csv", data.val.iter().flatten().cloned().collect())?;
    write("test.csv", data.test.iter().flatten().cloned().collect())?;
    Ok(())
}

/// Inverse of [`export_dir`]. Context order is the order of first
/// appearance in `stream.csv`.
pub fn load_dir<T: Real>(dir: &Path) -> Result<StreamData<T>> {
    let base: Vec<Sample<T>> = load_table(&dir.join("base.csv"))?;
    let stream: Vec<Sample<T>> = load_table(&dir.join("stream.csv"))?;
    let mut order: Vec<usize> = Vec::new();
    for s in &stream {
        if !order.contains(&s.context_tag) {
            order.push(s.context_tag);
        }
    }
    let group = |samples: Vec<Sample<T>>, name: &'static str| -> Result<Vec<Vec<Sample<T>>>> {
        let mut out = vec![Vec::new(); order.len()];
        for mut s in samples {
            let pos = order.iter().position(|&c| c == s.context_tag).ok_or_else(|| {
                Error::Config(format!("{name} holds context {} absent from the stream", s.context_tag))
            })?;
            s.stream_index = 0;
            out[pos].push(s);
        }
        Ok(out)
    };
    let val = group(load_table(&dir.join("val.csv"))?, "val.csv")?;
    let test = group(load_table(&dir.join("test.csv"))?, "test.csv")?;
    let dim = stream.first().map(|s| s.features.len());
    for s in base.iter().chain(&stream) {
        if Some(s.features.len()) != dim {
            return Err(Error::DimensionMismatch {
                expected: dim.unwrap_or(0),
                found: s.features.len(),
            });
        }
    }
    Ok(StreamData {
        base: base
            .into_iter()
            .map(|mut s| {
                s.stream_index = 0;
                oracle_label(&s, 0)
            })
            .collect(),
        stream,
        val,
        test,
        context_order: order,
    })
}

/// Fractions of each context routed to base (first context only),
/// continual stream, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub base_fraction: f64,
    pub continual_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        // 150 : 400 : 100 : 150 per context
        Self {
            base_fraction: 0.1875,
            continual_fraction: 0.5,
            val_fraction: 0.125,
            test_fraction: 0.1875,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.base_fraction, self.continual_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Config("split fractions must be positive".into()));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        Ok(())
    }
}

/// Splits a flat table into stream parts. Rows are grouped by context in
/// order of first appearance and shuffled per context. The base share of
/// later contexts joins their stream share.
pub fn split_table<T: Real>(rows: Vec<Sample<T>>, spec: &SplitSpec, seed: u64) -> Result<StreamData<T>> {
    spec.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("table"));
    }
    let mut order: Vec<usize> = Vec::new();
    for s in &rows {
        if !order.contains(&s.context_tag) {
            order.push(s.context_tag);
        }
    }
    let mut groups: Vec<Vec<Sample<T>>> = vec![Vec::new(); order.len()];
    for s in rows {
        let pos = order.iter().position(|&c| c == s.context_tag).expect("context recorded");
        groups[pos].push(s);
    }
    let mut rng = RngStream::new(seed).derive("split");
    let mut data = StreamData {
        base: Vec::new(),
        stream: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        context_order: order,
    };
    for (pos, mut g) in groups.into_iter().enumerate() {
        rng.shuffle(&mut g);
        let n = g.len() as f64;
        let nb = (spec.base_fraction * n).floor() as usize;
        let ns = ((spec.base_fraction + spec.continual_fraction) * n).floor() as usize;
        let nv = ((spec.base_fraction + spec.continual_fraction + spec.val_fraction) * n).floor() as usize;
        let test: Vec<Sample<T>> = g.split_off(nv);
        let val: Vec<Sample<T>> = g.split_off(ns);
        let cont = if pos == 0 { g.split_off(nb) } else { std::mem::take(&mut g) };
        data.base.extend(g.into_iter().map(|mut s| {
            s.stream_index = 0;
            oracle_label(&s, 0)
        }));
        for mut s in cont {
            s.stream_index = data.stream.len();
            data.stream.push(s);
        }
        data.val.push(val);
        data.test.push(test);
    }
    if data.base.is_empty() {
        return Err(Error::EmptyInput("base split"));
    }
    Ok(data)
}
