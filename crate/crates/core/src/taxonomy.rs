//! Layered label structures (subset → class → superclass), datasets labelled
//! at all three levels, the synthetic hierarchical generator and CIFAR
//! binary ingestion.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Granularity of a label domain. Ordered from finest to coarsest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DomainLevel {
    Subset,
    Class,
    Superclass,
}

impl DomainLevel {
    pub const ALL: [DomainLevel; 3] = [DomainLevel::Subset, DomainLevel::Class, DomainLevel::Superclass];

    pub fn name(self) -> &'static str {
        match self {
            DomainLevel::Subset => "subset",
            DomainLevel::Class => "class",
            DomainLevel::Superclass => "superclass",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "subset" | "sub-set" => Ok(DomainLevel::Subset),
            "class" => Ok(DomainLevel::Class),
            "superclass" | "super" => Ok(DomainLevel::Superclass),
            other => Err(Error::Domain(format!("unknown label level `{other}`"))),
        }
    }
}

impl core::fmt::Display for DomainLevel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainRelation {
    Match,
    /// The first level is strictly coarser than the second.
    SuperclassOf,
    /// The first level is strictly finer than the second.
    SubclassOf,
}

pub fn domain_relation(a: DomainLevel, b: DomainLevel) -> DomainRelation {
    match a.cmp(&b) {
        core::cmp::Ordering::Equal => DomainRelation::Match,
        core::cmp::Ordering::Greater => DomainRelation::SuperclassOf,
        core::cmp::Ordering::Less => DomainRelation::SubclassOf,
    }
}

/// Three-layer label structure. Every subset belongs to exactly one class and
/// every class to exactly one superclass.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTaxonomy {
    superclass_names: Vec<String>,
    class_names: Vec<String>,
    subset_names: Vec<String>,
    class_to_super: Vec<usize>,
    subset_to_class: Vec<usize>,
}

impl LabelTaxonomy {
    pub fn new(
        superclass_names: Vec<String>,
        class_names: Vec<String>,
        subset_names: Vec<String>,
        class_to_super: Vec<usize>,
        subset_to_class: Vec<usize>,
    ) -> Result<Self> {
        if class_to_super.len() != class_names.len() {
            return Err(Error::Shape(format!(
                "{} class names but {} class→superclass entries",
                class_names.len(),
                class_to_super.len()
            )));
        }
        if subset_to_class.len() != subset_names.len() {
            return Err(Error::Shape(format!(
                "{} subset names but {} subset→class entries",
                subset_names.len(),
                subset_to_class.len()
            )));
        }
        check_surjective("class→superclass", &class_to_super, superclass_names.len())?;
        check_surjective("subset→class", &subset_to_class, class_names.len())?;
        Ok(Self {
            superclass_names,
            class_names,
            subset_names,
            class_to_super,
            subset_to_class,
        })
    }

    pub fn count(&self, level: DomainLevel) -> usize {
        match level {
            DomainLevel::Subset => self.subset_names.len(),
            DomainLevel::Class => self.class_names.len(),
            DomainLevel::Superclass => self.superclass_names.len(),
        }
    }

    pub fn names(&self, level: DomainLevel) -> &[String] {
        match level {
            DomainLevel::Subset => &self.subset_names,
            DomainLevel::Class => &self.class_names,
            DomainLevel::Superclass => &self.superclass_names,
        }
    }

    pub fn id_of(&self, level: DomainLevel, name: &str) -> Option<usize> {
        self.names(level).iter().position(|n| n == name)
    }

    pub fn class_to_super(&self) -> &[usize] {
        &self.class_to_super
    }

    pub fn subset_to_class(&self) -> &[usize] {
        &self.subset_to_class
    }

    /// Maps a label id at `from` to its ancestor at `to`. `None` if `to` is
    /// finer than `from` or the id is out of range.
    pub fn lift(&self, id: usize, from: DomainLevel, to: DomainLevel) -> Option<usize> {
        if id >= self.count(from) || to < from {
            return None;
        }
        let mut level = from;
        let mut cur = id;
        while level < to {
            match level {
                DomainLevel::Subset => {
                    cur = self.subset_to_class[cur];
                    level = DomainLevel::Class;
                }
                DomainLevel::Class => {
                    cur = self.class_to_super[cur];
                    level = DomainLevel::Superclass;
                }
                DomainLevel::Superclass => unreachable!(),
            }
        }
        Some(cur)
    }

    /// Label ids at `level` that descend from `id` at the coarser-or-equal level `of`.
    pub fn descendants(&self, id: usize, of: DomainLevel, level: DomainLevel) -> Vec<usize> {
        (0..self.count(level))
            .filter(|&l| self.lift(l, level, of) == Some(id))
            .collect()
    }

    /// Checks that a sample's ids are mutually consistent under this taxonomy.
    pub fn check_sample(&self, s: &Sample) -> Result<()> {
        if s.subset >= self.subset_names.len() || s.class >= self.class_names.len() || s.superclass >= self.superclass_names.len() {
            return Err(Error::Domain(format!(
                "sample ids ({}, {}, {}) out of taxonomy bounds",
                s.subset, s.class, s.superclass
            )));
        }
        if self.subset_to_class[s.subset] != s.class || self.class_to_super[s.class] != s.superclass {
            return Err(Error::Domain(format!(
                "sample ids ({}, {}, {}) inconsistent with taxonomy maps",
                s.subset, s.class, s.superclass
            )));
        }
        Ok(())
    }
}

fn check_surjective(what: &str, map: &[usize], parents: usize) -> Result<()> {
    let mut seen = alloc::vec![false; parents];
    for (i, &p) in map.iter().enumerate() {
        if p >= parents {
            return Err(Error::Domain(format!("{what}: entry {i} points to missing parent {p}")));
        }
        seen[p] = true;
    }
    if let Some(p) = seen.iter().position(|s| !s) {
        return Err(Error::Domain(format!("{what}: parent {p} has no children")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub subset: usize,
    pub class: usize,
    pub superclass: usize,
}

/// Label id of a sample at the requested level.
#[inline]
pub fn labels_at(sample: &Sample, level: DomainLevel) -> usize {
    match level {
        DomainLevel::Subset => sample.subset,
        DomainLevel::Class => sample.class,
        DomainLevel::Superclass => sample.superclass,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    Cifar10,
    Cifar100,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Synthetic => "synthetic",
            Provenance::Cifar10 => "cifar10",
            Provenance::Cifar100 => "cifar100",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Provenance::Synthetic),
            "cifar10" => Ok(Provenance::Cifar10),
            "cifar100" => Ok(Provenance::Cifar100),
            other => Err(Error::Format(format!("unknown provenance `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    width: usize,
    provenance: Provenance,
    seed: u64,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, width: usize, provenance: Provenance, seed: u64) -> Result<Self> {
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.features.len() != width) {
            return Err(Error::Shape(format!(
                "sample {i} has width {} but dataset width is {width}",
                s.features.len()
            )));
        }
        Ok(Self {
            samples,
            width,
            provenance,
            seed,
        })
    }

    /// Builds a dataset and checks each sample against `taxonomy`.
    pub fn with_taxonomy(
        samples: Vec<Sample>,
        width: usize,
        provenance: Provenance,
        seed: u64,
        taxonomy: &LabelTaxonomy,
    ) -> Result<Self> {
        for s in &samples {
            taxonomy.check_sample(s)?;
        }
        Self::new(samples, width, provenance, seed)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn labels(&self, level: DomainLevel) -> Vec<usize> {
        self.samples.iter().map(|s| labels_at(s, level)).collect()
    }

    /// Stacks the features of the selected samples into a batch matrix.
    pub fn gather(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.width);
        for &i in idx {
            data.extend_from_slice(&self.samples[i].features);
        }
        Matrix::from_vec(idx.len(), self.width, data).expect("gathered rows share the dataset width")
    }

    pub fn all_features(&self) -> Matrix {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.gather(&idx)
    }

    /// Indices of samples whose label at `level` is in `labels`.
    pub fn indices_with(&self, level: DomainLevel, labels: &[usize]) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| labels.contains(&labels_at(s, level)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Splits off the last `test_per_subset` samples of every subset (in
    /// dataset order) as a held-out set.
    pub fn split_holdout(&self, test_per_subset: usize) -> Result<(Dataset, Dataset)> {
        let subsets = self.samples.iter().map(|s| s.subset).max().map_or(0, |m| m + 1);
        let mut per_subset: Vec<Vec<usize>> = alloc::vec![Vec::new(); subsets];
        for (i, s) in self.samples.iter().enumerate() {
            per_subset[s.subset].push(i);
        }
        let mut is_test = alloc::vec![false; self.len()];
        for (sub, members) in per_subset.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            if members.len() <= test_per_subset {
                return Err(Error::config(
                    "test_per_subset",
                    format!("subset {sub} has only {} samples", members.len()),
                ));
            }
            for &i in &members[members.len() - test_per_subset..] {
                is_test[i] = true;
            }
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, s) in self.samples.iter().enumerate() {
            if is_test[i] {
                test.push(s.clone());
            } else {
                train.push(s.clone());
            }
        }
        Ok((
            Dataset::new(train, self.width, self.provenance, self.seed)?,
            Dataset::new(test, self.width, self.provenance, self.seed)?,
        ))
    }
}

/// Parameters of the synthetic hierarchical Gaussian generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub superclasses: usize,
    pub classes_per_superclass: usize,
    pub subsets_per_class: usize,
    pub samples_per_subset: usize,
    pub width: usize,
    pub sigma_super: f64,
    pub sigma_class: f64,
    pub sigma_subset: f64,
    pub sigma_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            superclasses: 4,
            classes_per_superclass: 3,
            subsets_per_class: 2,
            samples_per_subset: 40,
            width: 16,
            sigma_super: 4.0,
            sigma_class: 1.5,
            sigma_subset: 0.5,
            sigma_noise: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("superclasses", self.superclasses),
            ("classes_per_superclass", self.classes_per_superclass),
            ("subsets_per_class", self.subsets_per_class),
            ("samples_per_subset", self.samples_per_subset),
            ("width", self.width),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        let sigmas = [
            ("sigma_super", self.sigma_super),
            ("sigma_class", self.sigma_class),
            ("sigma_subset", self.sigma_subset),
            ("sigma_noise", self.sigma_noise),
        ];
        for (name, v) in sigmas {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be a positive finite real"));
            }
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.superclasses * self.classes_per_superclass * self.subsets_per_class * self.samples_per_subset
    }

    pub fn taxonomy(&self) -> Result<LabelTaxonomy> {
        self.validate()?;
        let classes = self.superclasses * self.classes_per_superclass;
        let subsets = classes * self.subsets_per_class;
        LabelTaxonomy::new(
            (0..self.superclasses).map(|i| format!("super{i}")).collect(),
            (0..classes).map(|i| format!("class{i}")).collect(),
            (0..subsets).map(|i| format!("subset{i}")).collect(),
            (0..classes).map(|c| c / self.classes_per_superclass).collect(),
            (0..subsets).map(|s| s / self.subsets_per_class).collect(),
        )
    }
}

/// Cluster centres drawn by the synthetic generator, indexed by label id.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCenters {
    pub superclass: Vec<Vec<f64>>,
    pub class: Vec<Vec<f64>>,
    pub subset: Vec<Vec<f64>>,
}

fn gaussian_around(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    center
        .iter()
        .map(|&c| {
            let z: f64 = StandardNormal.sample(rng);
            c + sigma * z
        })
        .collect()
}

fn draw_centers(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> SynthCenters {
    let origin = alloc::vec![0.0; cfg.width];
    let superclass: Vec<Vec<f64>> = (0..cfg.superclasses)
        .map(|_| gaussian_around(rng, &origin, cfg.sigma_super))
        .collect();
    let classes = cfg.superclasses * cfg.classes_per_superclass;
    let class: Vec<Vec<f64>> = (0..classes)
        .map(|c| gaussian_around(rng, &superclass[c / cfg.classes_per_superclass], cfg.sigma_class))
        .collect();
    let subset: Vec<Vec<f64>> = (0..classes * cfg.subsets_per_class)
        .map(|s| gaussian_around(rng, &class[s / cfg.subsets_per_class], cfg.sigma_subset))
        .collect();
    SynthCenters { superclass, class, subset }
}

/// Centres used by [`generate_synthetic`] for the same config.
pub fn synthetic_centers(cfg: &SynthConfig) -> Result<SynthCenters> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(draw_centers(cfg, &mut rng))
}

/// Draws a hierarchical Gaussian mixture.
///
/// Standard normals come from the ziggurat sampler of `rand_distr` driven by
/// a ChaCha8 stream seeded with `cfg.seed`. All centres are drawn first
/// (superclasses, then classes, then subsets), followed by the samples of
/// each subset in subset order.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Dataset, LabelTaxonomy)> {
    let taxonomy = cfg.taxonomy()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers = draw_centers(cfg, &mut rng);
    let mut samples = Vec::with_capacity(cfg.total_samples());
    for (s, center) in centers.subset.iter().enumerate() {
        let class = s / cfg.subsets_per_class;
        let superclass = class / cfg.classes_per_superclass;
        for _ in 0..cfg.samples_per_subset {
            samples.push(Sample {
                features: gaussian_around(&mut rng, center, cfg.sigma_noise),
                subset: s,
                class,
                superclass,
            });
        }
    }
    let dataset = Dataset::new(samples, cfg.width, Provenance::Synthetic, cfg.seed)?;
    Ok((dataset, taxonomy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub const PIXELS: usize = 3072;

    pub fn record_size(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1 + Self::PIXELS,
            CifarVariant::Cifar100 => 2 + Self::PIXELS,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cifar10" => Ok(CifarVariant::Cifar10),
            "cifar100" => Ok(CifarVariant::Cifar100),
            other => Err(Error::Format(format!("unknown CIFAR variant `{other}`"))),
        }
    }
}

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

/// Five manual pairs: {airplane, bird}, {automobile, truck}, {cat, dog},
/// {deer, frog}, {horse, ship}.
pub const CIFAR10_SUPERCLASS_OF: [usize; 10] = [0, 1, 0, 2, 3, 2, 3, 4, 4, 1];

pub const CIFAR100_FINE: [&str; 100] = [
    "apple", "aquarium_fish", "baby", "bear", "beaver", "bed", "bee", "beetle", "bicycle", "bottle",
    "bowl", "boy", "bridge", "bus", "butterfly", "camel", "can", "castle", "caterpillar", "cattle",
    "chair", "chimpanzee", "clock", "cloud", "cockroach", "couch", "crab", "crocodile", "cup", "dinosaur",
    "dolphin", "elephant", "flatfish", "forest", "fox", "girl", "hamster", "house", "kangaroo", "keyboard",
    "lamp", "lawn_mower", "leopard", "lion", "lizard", "lobster", "man", "maple_tree", "motorcycle", "mountain",
    "mouse", "mushroom", "oak_tree", "orange", "orchid", "otter", "palm_tree", "pear", "pickup_truck", "pine_tree",
    "plain", "plate", "poppy", "porcupine", "possum", "rabbit", "raccoon", "ray", "road", "rocket",
    "rose", "sea", "seal", "shark", "shrew", "skunk", "skyscraper", "snail", "snake", "spider",
    "squirrel", "streetcar", "sunflower", "sweet_pepper", "table", "tank", "telephone", "television", "tiger", "tractor",
    "train", "trout", "tulip", "turtle", "wardrobe", "whale", "willow_tree", "wolf", "woman", "worm",
];

pub const CIFAR100_COARSE: [(&str, [&str; 5]); 20] = [
    ("aquatic_mammals", ["beaver", "dolphin", "otter", "seal", "whale"]),
    ("fish", ["aquarium_fish", "flatfish", "ray", "shark", "trout"]),
    ("flowers", ["orchid", "poppy", "rose", "sunflower", "tulip"]),
    ("food_containers", ["bottle", "bowl", "can", "cup", "plate"]),
    ("fruit_and_vegetables", ["apple", "mushroom", "orange", "pear", "sweet_pepper"]),
    ("household_electrical_devices", ["clock", "keyboard", "lamp", "telephone", "television"]),
    ("household_furniture", ["bed", "chair", "couch", "table", "wardrobe"]),
    ("insects", ["bee", "beetle", "butterfly", "caterpillar", "cockroach"]),
    ("large_carnivores", ["bear", "leopard", "lion", "tiger", "wolf"]),
    ("large_man-made_outdoor_things", ["bridge", "castle", "house", "road", "skyscraper"]),
    ("large_natural_outdoor_scenes", ["cloud", "forest", "mountain", "plain", "sea"]),
    ("large_omnivores_and_herbivores", ["camel", "cattle", "chimpanzee", "elephant", "kangaroo"]),
    ("medium_mammals", ["fox", "porcupine", "possum", "raccoon", "skunk"]),
    ("non-insect_invertebrates", ["crab", "lobster", "snail", "spider", "worm"]),
    ("people", ["baby", "boy", "girl", "man", "woman"]),
    ("reptiles", ["crocodile", "dinosaur", "lizard", "snake", "turtle"]),
    ("small_mammals", ["hamster", "mouse", "rabbit", "shrew", "squirrel"]),
    ("trees", ["maple_tree", "oak_tree", "palm_tree", "pine_tree", "willow_tree"]),
    ("vehicles_1", ["bicycle", "bus", "motorcycle", "pickup_truck", "train"]),
    ("vehicles_2", ["lawn_mower", "rocket", "streetcar", "tank", "tractor"]),
];

/// Taxonomy for a CIFAR variant. CIFAR has no layer below classes, so each
/// class carries exactly one subset with the same id.
pub fn cifar_taxonomy(variant: CifarVariant) -> LabelTaxonomy {
    let (supers, classes, class_to_super): (Vec<String>, Vec<String>, Vec<usize>) = match variant {
        CifarVariant::Cifar10 => (
            (1..=5).map(|i| i.to_string()).collect(),
            CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect(),
            CIFAR10_SUPERCLASS_OF.to_vec(),
        ),
        CifarVariant::Cifar100 => {
            let mut map = alloc::vec![usize::MAX; 100];
            for (sup, (_, members)) in CIFAR100_COARSE.iter().enumerate() {
                for m in members {
                    let fine = CIFAR100_FINE.iter().position(|f| f == m).expect("coarse table names a known fine label");
                    map[fine] = sup;
                }
            }
            (
                CIFAR100_COARSE.iter().map(|(n, _)| n.to_string()).collect(),
                CIFAR100_FINE.iter().map(|s| s.to_string()).collect(),
                map,
            )
        }
    };
    let n = classes.len();
    LabelTaxonomy::new(supers, classes.clone(), classes, class_to_super, (0..n).collect())
        .expect("built-in CIFAR taxonomies are consistent")
}

/// Parses CIFAR binary records. Pixels are scaled to [0, 1].
pub fn parse_cifar_binary(bytes: &[u8], variant: CifarVariant) -> Result<(Dataset, LabelTaxonomy)> {
    let rec = variant.record_size();
    if !bytes.len().is_multiple_of(rec) {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {rec}-byte records",
            bytes.len()
        )));
    }
    let taxonomy = cifar_taxonomy(variant);
    let mut samples = Vec::with_capacity(bytes.len() / rec);
    for (r, chunk) in bytes.chunks_exact(rec).enumerate() {
        let (class, superclass, pixels) = match variant {
            CifarVariant::Cifar10 => {
                let label = chunk[0] as usize;
                if label >= 10 {
                    return Err(Error::Format(format!("record {r}: label byte {label} out of range")));
                }
                (label, CIFAR10_SUPERCLASS_OF[label], &chunk[1..])
            }
            CifarVariant::Cifar100 => {
                let coarse = chunk[0] as usize;
                let fine = chunk[1] as usize;
                if coarse >= 20 || fine >= 100 {
                    return Err(Error::Format(format!(
                        "record {r}: label bytes ({coarse}, {fine}) out of range"
                    )));
                }
                if taxonomy.class_to_super()[fine] != coarse {
                    return Err(Error::Format(format!(
                        "record {r}: coarse label {coarse} does not contain fine label {fine}"
                    )));
                }
                (fine, coarse, &chunk[2..])
            }
        };
        samples.push(Sample {
            features: pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
            subset: class,
            class,
            superclass,
        });
    }
    let provenance = match variant {
        CifarVariant::Cifar10 => Provenance::Cifar10,
        CifarVariant::Cifar100 => Provenance::Cifar100,
    };
    let dataset = Dataset::new(samples, CifarVariant::PIXELS, provenance, 0)?;
    Ok((dataset, taxonomy))
}

/// Re-encodes a CIFAR-derived dataset into its binary record layout.
pub fn encode_cifar_binary(dataset: &Dataset, variant: CifarVariant) -> Result<Vec<u8>> {
    if dataset.width() != CifarVariant::PIXELS {
        return Err(Error::Shape(format!("CIFAR records need width 3072, got {}", dataset.width())));
    }
    let mut out = Vec::with_capacity(dataset.len() * variant.record_size());
    for s in dataset.samples() {
        match variant {
            CifarVariant::Cifar10 => out.push(s.class as u8),
            CifarVariant::Cifar100 => {
                out.push(s.superclass as u8);
                out.push(s.class as u8);
            }
        }
        out.extend(s.features.iter().map(|&f| libm::round(f * 255.0).clamp(0.0, 255.0) as u8));
    }
    Ok(out)
}
