//! Synthetic multi-task identity-retrieval datasets with controllable
//! inter-task relatedness, plus the dataset container format.
//!
//! Each task renders procedural texture images: an identity owns a smooth
//! value-noise field, and each sample of that identity is the field under a
//! small deterministic shift plus pixel noise. Tasks share generative
//! factor streams according to the relatedness matrix, so related tasks see
//! correlated (at the limit, identical) image populations.
//!
//! All rendering is integer arithmetic over hashes — no floating point, no
//! trig — so a given spec produces byte-identical datasets on any platform.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use crate::util::fnv1a64;

/// Number of independent generative factor streams blended into an image.
const NUM_FACTOR_SLOTS: u64 = 4;
/// Value-noise lattice cell size in pixels.
const NOISE_GRID: usize = 4;
/// Container format version.
const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"UFODATA\n";

/// Train/query/gallery fractions for one task; must sum to 1 and leave at
/// least one sample in each split per identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub query: f64,
    pub gallery: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.625, query: 0.125, gallery: 0.25 }
    }
}

/// Per-task generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Number of identities (labels); at least 2.
    pub identities: usize,
    /// Samples rendered per identity; at least 3 so every split is served.
    pub samples_per_identity: usize,
    /// Square image side in pixels.
    pub image_size: usize,
    #[serde(default)]
    pub split: SplitFractions,
    /// Maximum per-sample field shift in pixels.
    #[serde(default = "default_jitter")]
    pub jitter: usize,
    /// Additive per-pixel noise amplitude (0..=127).
    #[serde(default = "default_noise")]
    pub noise: u8,
    /// Identity contrast: how strongly the identity field departs from the
    /// task-wide base field (0..=255).
    #[serde(default = "default_id_strength")]
    pub id_strength: u8,
}

fn default_jitter() -> usize {
    3
}
fn default_noise() -> u8 {
    40
}
fn default_id_strength() -> u8 {
    96
}

/// Full suite specification: task list, relatedness matrix, seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuiteSpec {
    pub tasks: Vec<TaskSpec>,
    /// Symmetric matrix in [0,1] with unit diagonal; entry (i, j) is the
    /// expected fraction of generative factor streams tasks i and j share.
    pub relatedness: Vec<Vec<f64>>,
    pub seed: u64,
}

impl TaskSuiteSpec {
    /// Uniform-relatedness convenience constructor: every off-diagonal
    /// entry is `rho`.
    pub fn uniform(tasks: Vec<TaskSpec>, rho: f64, seed: u64) -> Self {
        let t = tasks.len();
        let relatedness = (0..t)
            .map(|i| (0..t).map(|j| if i == j { 1.0 } else { rho }).collect())
            .collect();
        TaskSuiteSpec { tasks, relatedness, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        let t = self.tasks.len();
        if t == 0 {
            return bad("at least one task required".into());
        }
        for (i, task) in self.tasks.iter().enumerate() {
            if task.identities < 2 {
                return bad(format!("task {i}: identity count must be >= 2, got {}", task.identities));
            }
            if task.samples_per_identity < 3 {
                return bad(format!(
                    "task {i}: need >= 3 samples per identity to fill train/query/gallery, got {}",
                    task.samples_per_identity
                ));
            }
            if task.image_size < NOISE_GRID {
                return bad(format!("task {i}: image size must be >= {NOISE_GRID}"));
            }
            let s = task.split;
            if (s.train + s.query + s.gallery - 1.0).abs() > 1e-9 {
                return bad(format!("task {i}: split fractions must sum to 1"));
            }
            if s.train < 0.0 || s.query < 0.0 || s.gallery < 0.0 {
                return bad(format!("task {i}: split fractions must be non-negative"));
            }
            if task.noise > 127 {
                return bad(format!("task {i}: noise amplitude must be <= 127"));
            }
            split_counts(task)?;
        }
        if self.relatedness.len() != t || self.relatedness.iter().any(|r| r.len() != t) {
            return bad(format!("relatedness must be {t}x{t}"));
        }
        for i in 0..t {
            if (self.relatedness[i][i] - 1.0).abs() > 1e-12 {
                return bad(format!("relatedness diagonal entry ({i},{i}) must be 1"));
            }
            for j in 0..t {
                let v = self.relatedness[i][j];
                if !(0.0..=1.0).contains(&v) {
                    return bad(format!("relatedness ({i},{j}) = {v} outside [0,1]"));
                }
                if (v - self.relatedness[j][i]).abs() > 1e-12 {
                    return bad(format!("relatedness must be symmetric; ({i},{j}) != ({j},{i})"));
                }
            }
        }
        Ok(())
    }
}

/// Which split a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Query,
    Gallery,
}

impl SplitTag {
    fn to_byte(self) -> u8 {
        match self {
            SplitTag::Train => 0,
            SplitTag::Query => 1,
            SplitTag::Gallery => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(SplitTag::Train),
            1 => Ok(SplitTag::Query),
            2 => Ok(SplitTag::Gallery),
            other => Err(CoreError::Format(format!("unknown split tag byte {other}"))),
        }
    }
}

/// One task's rendered dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    /// Row-major `[num_samples, image_size^2]` grayscale bytes.
    pub images: Vec<u8>,
    /// Dense identity label per sample.
    pub labels: Vec<u32>,
    pub split: Vec<SplitTag>,
    pub image_size: usize,
    pub identities: usize,
}

impl TaskData {
    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }

    pub fn indices_for(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.num_samples()).filter(|&i| self.split[i] == tag).collect()
    }

    /// Declared dataset size used for batch apportionment: the train split.
    pub fn train_size(&self) -> usize {
        self.split.iter().filter(|&&t| t == SplitTag::Train).count()
    }

    /// Materializes the given samples as model input rows in [-1, 1].
    pub fn input_rows(&self, indices: &[usize]) -> Tensor {
        let px = self.pixels();
        let mut data = Vec::with_capacity(indices.len() * px);
        for &i in indices {
            data.extend(
                self.images[i * px..(i + 1) * px]
                    .iter()
                    .map(|&b| b as f64 / 127.5 - 1.0),
            );
        }
        Tensor::new(vec![indices.len(), px], data).expect("row extraction is shape-consistent")
    }

    pub fn labels_for(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i] as usize).collect()
    }
}

/// A generated suite: the spec that produced it plus per-task data.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSuite {
    pub spec: TaskSuiteSpec,
    pub tasks: Vec<TaskData>,
}

fn split_counts(task: &TaskSpec) -> Result<(usize, usize, usize)> {
    let s = task.samples_per_identity;
    let nq = ((task.split.query * s as f64).round() as usize).max(1);
    let ng = ((task.split.gallery * s as f64).round() as usize).max(1);
    if nq + ng >= s {
        return Err(CoreError::Config(format!(
            "split fractions leave no train samples ({s} per identity, query {nq}, gallery {ng})"
        )));
    }
    Ok((s - nq - ng, nq, ng))
}

fn key_hash(parts: &[u64]) -> u64 {
    let mut bytes = Vec::with_capacity(parts.len() * 8);
    for p in parts {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fnv1a64(&bytes)
}

/// Uniform value in [0, 1) from a hash, using the top 53 bits.
fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise at integer pixel coordinates: random bytes on a
/// lattice, bilinearly blended with integer weights.
fn value_noise(key: u64, x: usize, y: usize) -> u32 {
    let g = NOISE_GRID;
    let (cx, cy) = (x / g, y / g);
    let (u, v) = ((x % g) as u32, (y % g) as u32);
    let corner = |dx: usize, dy: usize| -> u32 {
        (key_hash(&[key, (cx + dx) as u64, (cy + dy) as u64]) >> 24) as u32 & 0xFF
    };
    let (g32, c00, c10, c01, c11) = (g as u32, corner(0, 0), corner(1, 0), corner(0, 1), corner(1, 1));
    let top = (g32 - u) * c00 + u * c10;
    let bot = (g32 - u) * c01 + u * c11;
    ((g32 - v) * top + v * bot) / (g32 * g32)
}

/// For each factor slot, tasks connected by relatedness draws share one
/// stream; a task's stream id is the smallest task index in its component.
fn factor_components(spec: &TaskSuiteSpec) -> Vec<Vec<usize>> {
    let t = spec.tasks.len();
    (0..NUM_FACTOR_SLOTS)
        .map(|slot| {
            // Union-find with path halving over the task indices.
            let mut parent: Vec<usize> = (0..t).collect();
            fn find(parent: &mut [usize], mut i: usize) -> usize {
                while parent[i] != i {
                    parent[i] = parent[parent[i]];
                    i = parent[i];
                }
                i
            }
            for i in 0..t {
                for j in i + 1..t {
                    let draw = unit_from_hash(key_hash(&[spec.seed, 0xFAC7, slot, i as u64, j as u64]));
                    if draw < spec.relatedness[i][j] {
                        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
            (0..t).map(|i| find(&mut parent, i)).collect()
        })
        .collect()
}

fn render_task(spec: &TaskSuiteSpec, task_idx: usize, components: &[Vec<usize>]) -> Result<TaskData> {
    let task = &spec.tasks[task_idx];
    let (n_train, n_query, n_gallery) = split_counts(task)?;
    let size = task.image_size;
    let px = size * size;
    let num = task.identities * task.samples_per_identity;
    let mut images = vec![0u8; num * px];
    let mut labels = Vec::with_capacity(num);
    let mut split = Vec::with_capacity(num);

    let slot_keys: Vec<u64> = (0..NUM_FACTOR_SLOTS)
        .map(|slot| {
            let rep = components[slot as usize][task_idx] as u64;
            key_hash(&[spec.seed, 0x57EA, slot, rep])
        })
        .collect();

    let noise_span = 2 * task.noise as u64 + 1;
    let strength = task.id_strength as u32;

    for id in 0..task.identities {
        for s in 0..task.samples_per_identity {
            let sample_index = id * task.samples_per_identity + s;
            labels.push(id as u32);
            split.push(if s < n_train {
                SplitTag::Train
            } else if s < n_train + n_query {
                SplitTag::Query
            } else {
                SplitTag::Gallery
            });
            debug_assert_eq!(n_train + n_query + n_gallery, task.samples_per_identity);

            let out = &mut images[sample_index * px..(sample_index + 1) * px];
            for (slot, &stream) in slot_keys.iter().enumerate() {
                let slot = slot as u64;
                let base_key = key_hash(&[stream, 0xBA5E, slot]);
                let id_key = key_hash(&[stream, 0x1DE7, id as u64]);
                let samp = key_hash(&[stream, 0x5A3B, id as u64, s as u64]);
                let jitter = task.jitter as u64 + 1;
                let (dx, dy) = ((samp % jitter) as usize, ((samp >> 16) % jitter) as usize);
                let noise_key = key_hash(&[stream, 0x9015, id as u64, s as u64]);
                for y in 0..size {
                    for x in 0..size {
                        let base = value_noise(base_key, x + dx, y + dy);
                        let ident = value_noise(id_key, x + dx, y + dy);
                        let field = (base * (256 - strength) + ident * strength) / 256;
                        let nh = key_hash(&[noise_key, x as u64, y as u64]);
                        let noise = (nh % noise_span) as i64 - task.noise as i64;
                        let value = (field as i64 + noise).clamp(0, 255) as u32;
                        // Accumulate the slot average incrementally.
                        let cell = &mut out[y * size + x];
                        *cell = (*cell as u32 + value / NUM_FACTOR_SLOTS as u32).min(255) as u8;
                    }
                }
            }
        }
    }

    Ok(TaskData {
        images,
        labels,
        split,
        image_size: size,
        identities: task.identities,
    })
}

/// Renders every task of the suite. Pure function of the spec.
pub fn generate(spec: &TaskSuiteSpec) -> Result<TaskSuite> {
    spec.validate()?;
    let components = factor_components(spec);
    let tasks = (0..spec.tasks.len())
        .map(|i| render_task(spec, i, &components))
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskSuite { spec: spec.clone(), tasks })
}

#[derive(Debug, Serialize, Deserialize)]
struct ContainerHeader {
    version: u32,
    seed: u64,
    tasks: Vec<TaskSpec>,
    /// Per task `[num_samples, pixels]`.
    shapes: Vec<[usize; 2]>,
    splits: Vec<SplitFractions>,
    relatedness: Vec<Vec<f64>>,
}

/// Writes the suite in the dataset container format: magic, JSON header
/// line, then per task the image bytes, little-endian u32 labels, and
/// split tags.
pub fn save(suite: &TaskSuite, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let header = ContainerHeader {
        version: FORMAT_VERSION,
        seed: suite.spec.seed,
        tasks: suite.spec.tasks.clone(),
        shapes: suite
            .tasks
            .iter()
            .map(|t| [t.num_samples(), t.pixels()])
            .collect(),
        splits: suite.spec.tasks.iter().map(|t| t.split).collect(),
        relatedness: suite.spec.relatedness.clone(),
    };
    let mut line = serde_json::to_vec(&header)?;
    line.push(b'\n');
    w.write_all(&line)?;
    for task in &suite.tasks {
        w.write_all(&task.images)?;
        for l in &task.labels {
            w.write_all(&l.to_le_bytes())?;
        }
        w.write_all(&task.split.iter().map(|t| t.to_byte()).collect::<Vec<u8>>())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a container written by [`save`], verifying magic, version, and
/// payload lengths.
pub fn load(path: &Path) -> Result<TaskSuite> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| CoreError::Format("file shorter than magic".into()))?;
    if &magic != MAGIC {
        return Err(CoreError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let mut header_line = Vec::new();
    loop {
        let mut b = [0u8; 1];
        r.read_exact(&mut b)
            .map_err(|_| CoreError::Format("truncated header line".into()))?;
        if b[0] == b'\n' {
            break;
        }
        header_line.push(b[0]);
        if header_line.len() > 1 << 20 {
            return Err(CoreError::Format("header line exceeds 1 MiB".into()));
        }
    }
    let header: ContainerHeader = serde_json::from_slice(&header_line)?;
    if header.version != FORMAT_VERSION {
        return Err(CoreError::Format(format!(
            "container version {} unsupported (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    if header.shapes.len() != header.tasks.len() {
        return Err(CoreError::Format("shape count does not match task count".into()));
    }

    let mut tasks = Vec::with_capacity(header.tasks.len());
    for (spec, shape) in header.tasks.iter().zip(&header.shapes) {
        let [num, px] = *shape;
        if px != spec.image_size * spec.image_size
            || num != spec.identities * spec.samples_per_identity
        {
            return Err(CoreError::Format(format!(
                "declared shape [{num}, {px}] inconsistent with task spec"
            )));
        }
        let mut images = vec![0u8; num * px];
        r.read_exact(&mut images)
            .map_err(|_| CoreError::Format("truncated image payload".into()))?;
        let mut labels = Vec::with_capacity(num);
        for _ in 0..num {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)
                .map_err(|_| CoreError::Format("truncated label payload".into()))?;
            labels.push(u32::from_le_bytes(b));
        }
        let mut tags = vec![0u8; num];
        r.read_exact(&mut tags)
            .map_err(|_| CoreError::Format("truncated split payload".into()))?;
        let split = tags
            .into_iter()
            .map(SplitTag::from_byte)
            .collect::<Result<Vec<_>>>()?;
        tasks.push(TaskData {
            images,
            labels,
            split,
            image_size: spec.image_size,
            identities: spec.identities,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CoreError::Format("trailing bytes after declared payloads".into()));
    }
    let spec = TaskSuiteSpec {
        tasks: header.tasks,
        relatedness: header.relatedness,
        seed: header.seed,
    };
    spec.validate()?;
    Ok(TaskSuite { spec, tasks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_task() -> TaskSpec {
        TaskSpec {
            identities: 3,
            samples_per_identity: 4,
            image_size: 8,
            split: SplitFractions { train: 0.5, query: 0.25, gallery: 0.25 },
            jitter: 2,
            noise: 30,
            id_strength: 96,
        }
    }

    fn pair_spec(rho: f64, seed: u64) -> TaskSuiteSpec {
        TaskSuiteSpec::uniform(vec![small_task(), small_task()], rho, seed)
    }

    #[test]
    fn validation_rejects_degenerate_specs() {
        let mut s = pair_spec(0.5, 1);
        s.tasks[0].identities = 1;
        assert!(s.validate().is_err());

        let mut s = pair_spec(0.5, 1);
        s.tasks[1].samples_per_identity = 2;
        assert!(s.validate().is_err());

        let mut s = pair_spec(0.5, 1);
        s.relatedness[0][1] = 0.9; // breaks symmetry
        assert!(s.validate().is_err());

        let mut s = pair_spec(0.5, 1);
        s.relatedness[0][0] = 0.7; // breaks unit diagonal
        assert!(s.validate().is_err());

        let mut s = pair_spec(1.5, 1);
        s.relatedness[1][0] = 1.5;
        assert!(s.validate().is_err());

        let mut s = pair_spec(0.5, 1);
        s.tasks[0].split = SplitFractions { train: 0.9, query: 0.05, gallery: 0.5 };
        assert!(s.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = pair_spec(0.5, 42);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate(&pair_spec(0.5, 43)).unwrap();
        assert_ne!(a.tasks[0].images, c.tasks[0].images);
    }

    #[test]
    fn full_relatedness_gives_identical_datasets() {
        let suite = generate(&pair_spec(1.0, 7)).unwrap();
        assert_eq!(suite.tasks[0].images, suite.tasks[1].images);
        assert_eq!(suite.tasks[0].labels, suite.tasks[1].labels);
    }

    #[test]
    fn zero_relatedness_gives_distinct_datasets() {
        let suite = generate(&pair_spec(0.0, 7)).unwrap();
        assert_ne!(suite.tasks[0].images, suite.tasks[1].images);
    }

    #[test]
    fn relatedness_grades_pixel_correlation() {
        // Pearson correlation of the two tasks' image bytes should order
        // with the relatedness knob.
        let corr_at = |rho: f64| -> f64 {
            let suite = generate(&pair_spec(rho, 11)).unwrap();
            let a: Vec<f64> = suite.tasks[0].images.iter().map(|&b| b as f64).collect();
            let b: Vec<f64> = suite.tasks[1].images.iter().map(|&b| b as f64).collect();
            let n = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
            cov / (va.sqrt() * vb.sqrt())
        };
        let low = corr_at(0.0);
        let high = corr_at(0.8);
        assert!(
            high > low + 0.2,
            "expected correlation to rise with relatedness: low {low}, high {high}"
        );
    }

    #[test]
    fn every_identity_serves_query_and_gallery() {
        let suite = generate(&pair_spec(0.3, 5)).unwrap();
        for task in &suite.tasks {
            for id in 0..task.identities as u32 {
                let has = |tag: SplitTag| {
                    task.labels
                        .iter()
                        .zip(&task.split)
                        .any(|(&l, &s)| l == id && s == tag)
                };
                assert!(has(SplitTag::Train));
                assert!(has(SplitTag::Query));
                assert!(has(SplitTag::Gallery));
            }
        }
    }

    #[test]
    fn input_rows_are_scaled_to_unit_range() {
        let suite = generate(&pair_spec(0.5, 3)).unwrap();
        let task = &suite.tasks[0];
        let idx = task.indices_for(SplitTag::Train);
        let rows = task.input_rows(&idx);
        assert_eq!(rows.shape(), &[idx.len(), task.pixels()]);
        assert!(rows.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(task.labels_for(&idx).len(), idx.len());
    }

    #[test]
    fn container_roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.ufodata");
        let suite = generate(&pair_spec(0.8, 17)).unwrap();
        save(&suite, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, suite);
    }

    #[test]
    fn container_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.ufodata");
        let suite = generate(&pair_spec(0.8, 17)).unwrap();
        save(&suite, &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();

        // Corrupted magic.
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(CoreError::Format(_))));

        // Truncated payload.
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load(&path), Err(CoreError::Format(_))));

        // Trailing garbage.
        let mut long = bytes.clone();
        long.extend_from_slice(b"zz");
        std::fs::write(&path, &long).unwrap();
        assert!(matches!(load(&path), Err(CoreError::Format(_))));

        // Version bump.
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let bumped = text.replacen("\"version\":1", "\"version\":9", 1);
        std::fs::write(&path, bumped.as_bytes()).unwrap();
        assert!(matches!(load(&path), Err(CoreError::Format(_))));
    }

    #[test]
    fn fixture_checksums_are_stable() {
        // Frozen reference: any change to the rendering procedure shows up
        // here before it silently invalidates saved datasets.
        let suite = generate(&pair_spec(0.8, 2026)).unwrap();
        let sums: Vec<u64> = suite.tasks.iter().map(|t| fnv1a64(&t.images)).collect();
        assert_eq!(sums, vec![0xed238e689ebb5bcc, 0xa64026c20c3acb93]);
        let label_sum = fnv1a64(
            &suite.tasks[0]
                .labels
                .iter()
                .flat_map(|l| l.to_le_bytes())
                .collect::<Vec<u8>>(),
        );
        assert_eq!(label_sum, 0x5f00530cebe2fc05);
    }
}
