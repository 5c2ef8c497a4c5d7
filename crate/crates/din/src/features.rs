//! Multi-group categorical feature space and sparse group-wise encoding.
//!
//! An instance is a list of per-group feature id sets: one-hot groups carry
//! exactly one id, multi-hot groups carry a deduplicated, ascending id list.
//! The implied binary vector over the whole feature space has one nonzero
//! entry per stored id.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// How a feature group encodes into its slice of the binary feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    OneHot,
    MultiHot,
}

impl Encoding {
    pub fn as_str(&self) -> &'static str {
        match self {
            Encoding::OneHot => "one-hot",
            Encoding::MultiHot => "multi-hot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "one-hot" => Some(Encoding::OneHot),
            "multi-hot" => Some(Encoding::MultiHot),
            _ => None,
        }
    }
}

/// Which side of the prediction task a group describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    UserProfile,
    UserBehavior,
    Ad,
    Context,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::UserProfile => "user-profile",
            Category::UserBehavior => "user-behavior",
            Category::Ad => "ad",
            Category::Context => "context",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "user-profile" => Some(Category::UserProfile),
            "user-behavior" => Some(Category::UserBehavior),
            "ad" => Some(Category::Ad),
            "context" => Some(Category::Context),
            _ => None,
        }
    }
}

/// One feature group: a named id space of `cardinality` unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGroupSpec {
    pub name: String,
    pub cardinality: usize,
    pub encoding: Encoding,
    pub category: Category,
    /// Cap on ids per instance for multi-hot groups; longer raw sequences
    /// keep the most recent ids.
    pub max_ids_per_instance: usize,
}

impl FeatureGroupSpec {
    pub fn new(
        name: impl Into<String>,
        cardinality: usize,
        encoding: Encoding,
        category: Category,
        max_ids_per_instance: usize,
    ) -> Self {
        FeatureGroupSpec {
            name: name.into(),
            cardinality,
            encoding,
            category,
            max_ids_per_instance,
        }
    }
}

/// Ordered list of feature groups spanning the whole sparse feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    groups: Vec<FeatureGroupSpec>,
    total_dimensionality: usize,
}

impl FeatureSchema {
    pub fn groups(&self) -> &[FeatureGroupSpec] {
        &self.groups
    }

    pub fn group(&self, idx: usize) -> &FeatureGroupSpec {
        &self.groups[idx]
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    /// Sum of group cardinalities: the width of the implied binary vector.
    pub fn total_dimensionality(&self) -> usize {
        self.total_dimensionality
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn behavior_groups(&self) -> impl Iterator<Item = usize> + '_ {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.category == Category::UserBehavior)
            .map(|(i, _)| i)
    }
}

/// One encoded training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Per-group id lists in schema order. Multi-hot lists are deduplicated
    /// and sorted ascending; one-hot lists hold exactly one id.
    pub ids: Vec<Vec<u32>>,
    pub label: bool,
    /// Opaque key for per-user metric grouping.
    pub user_key: String,
}

impl Instance {
    /// Count of nonzero entries in the implied binary vector.
    pub fn nonzero_count(&self) -> usize {
        self.ids.iter().map(|l| l.len()).sum()
    }
}

/// Validates group specs and assembles a schema.
pub fn build_schema(specs: Vec<FeatureGroupSpec>) -> Result<FeatureSchema> {
    if specs.is_empty() {
        return Err(Error::InvalidInput("schema needs at least one group".into()));
    }
    for (i, spec) in specs.iter().enumerate() {
        if spec.cardinality == 0 {
            return Err(Error::ZeroCardinality(spec.name.clone()));
        }
        if specs[..i].iter().any(|other| other.name == spec.name) {
            return Err(Error::DuplicateGroupName(spec.name.clone()));
        }
    }
    if !specs.iter().any(|s| s.category == Category::UserBehavior) {
        return Err(Error::MissingCategory("user-behavior"));
    }
    if !specs.iter().any(|s| s.category == Category::Ad) {
        return Err(Error::MissingCategory("ad"));
    }
    let total_dimensionality = specs.iter().map(|s| s.cardinality).sum();
    Ok(FeatureSchema {
        groups: specs,
        total_dimensionality,
    })
}

/// Encodes raw per-group id lists into a validated instance.
///
/// Multi-hot lists are truncated to the most recent `max_ids_per_instance`
/// distinct ids (raw order is treated as temporal), then stored sorted
/// ascending. Empty multi-hot lists are legal cold-start inputs; one-hot
/// groups must carry exactly one id.
pub fn encode_instance(
    raw: &[Vec<u32>],
    label: bool,
    user_key: impl Into<String>,
    schema: &FeatureSchema,
) -> Result<Instance> {
    if raw.len() != schema.group_count() {
        return Err(Error::GroupCountMismatch {
            got: raw.len(),
            expected: schema.group_count(),
        });
    }
    let mut ids = Vec::with_capacity(raw.len());
    for (group, list) in schema.groups().iter().zip(raw) {
        for &id in list {
            if id as usize >= group.cardinality {
                return Err(Error::IdOutOfRange {
                    group: group.name.clone(),
                    id,
                    cardinality: group.cardinality,
                });
            }
        }
        let encoded = match group.encoding {
            Encoding::OneHot => {
                if list.len() != 1 {
                    return Err(Error::OneHotArity {
                        group: group.name.clone(),
                        got: list.len(),
                    });
                }
                list.clone()
            }
            Encoding::MultiHot => {
                // Walk backwards so the most recent occurrence of each id
                // wins the truncation budget.
                let mut kept: Vec<u32> = Vec::new();
                for &id in list.iter().rev() {
                    if kept.contains(&id) {
                        continue;
                    }
                    kept.push(id);
                    if kept.len() == group.max_ids_per_instance {
                        break;
                    }
                }
                kept.sort_unstable();
                kept
            }
        };
        ids.push(encoded);
    }
    Ok(Instance {
        ids,
        label,
        user_key: user_key.into(),
    })
}

/// MLP input width after group-wise pooling and concatenation: one pooled
/// slot of width `embedding_dim` per group.
pub fn dense_dimensionality(schema: &FeatureSchema, embedding_dim: usize) -> usize {
    schema.group_count() * embedding_dim
}

// ---------------------------------------------------------------------------
// Schema and instance file formats
// ---------------------------------------------------------------------------

/// Writes one group per line: `name<TAB>cardinality<TAB>encoding<TAB>category<TAB>max_ids`.
pub fn write_schema(schema: &FeatureSchema, w: &mut impl Write) -> std::io::Result<()> {
    for g in schema.groups() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            g.name,
            g.cardinality,
            g.encoding.as_str(),
            g.category.as_str(),
            g.max_ids_per_instance
        )?;
    }
    Ok(())
}

pub fn read_schema(path: &Path) -> Result<FeatureSchema> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading schema {}", path.display()), e))?;
    let mut specs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let malformed = |problem: &str| Error::Malformed {
            path: path.display().to_string(),
            line: lineno + 1,
            problem: problem.to_string(),
        };
        if fields.len() != 5 {
            return Err(malformed("expected 5 tab-separated fields"));
        }
        let cardinality: usize = fields[1]
            .parse()
            .map_err(|_| malformed("bad cardinality"))?;
        let encoding = Encoding::parse(fields[2]).ok_or_else(|| malformed("bad encoding"))?;
        let category = Category::parse(fields[3]).ok_or_else(|| malformed("bad category"))?;
        let max_ids: usize = fields[4].parse().map_err(|_| malformed("bad max_ids"))?;
        specs.push(FeatureGroupSpec::new(
            fields[0].to_string(),
            cardinality,
            encoding,
            category,
            max_ids,
        ));
    }
    build_schema(specs)
}

/// Formats one instance as a line: `user_key<TAB>label<TAB>ids,...` with `-`
/// for an empty list, groups in schema order.
pub fn format_instance(inst: &Instance) -> String {
    let mut line = format!("{}\t{}", inst.user_key, inst.label as u8);
    for list in &inst.ids {
        line.push('\t');
        if list.is_empty() {
            line.push('-');
        } else {
            let mut first = true;
            for id in list {
                if !first {
                    line.push(',');
                }
                fmt::Write::write_fmt(&mut line, format_args!("{id}")).unwrap();
                first = false;
            }
        }
    }
    line
}

pub fn parse_instance(line: &str, schema: &FeatureSchema) -> Result<Instance> {
    let mut fields = line.split('\t');
    let user_key = fields
        .next()
        .ok_or_else(|| Error::InvalidInput("empty instance line".into()))?;
    let label = match fields.next() {
        Some("0") => false,
        Some("1") => true,
        _ => return Err(Error::InvalidInput(format!("bad label in line `{line}`"))),
    };
    let mut raw = Vec::with_capacity(schema.group_count());
    for field in fields {
        if field == "-" {
            raw.push(Vec::new());
        } else {
            let ids: std::result::Result<Vec<u32>, _> =
                field.split(',').map(str::parse::<u32>).collect();
            raw.push(ids.map_err(|_| Error::InvalidInput(format!("bad id list `{field}`")))?);
        }
    }
    encode_instance(&raw, label, user_key, schema)
}

pub fn write_instances(instances: &[Instance], w: &mut impl Write) -> std::io::Result<()> {
    for inst in instances {
        writeln!(w, "{}", format_instance(inst))?;
    }
    Ok(())
}

pub fn read_instances(path: &Path, schema: &FeatureSchema) -> Result<Vec<Instance>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("reading instances {}", path.display()), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.is_empty() {
            continue;
        }
        out.push(parse_instance(&line, schema).map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            line: lineno + 1,
            problem: e.to_string(),
        })?);
    }
    Ok(out)
}
