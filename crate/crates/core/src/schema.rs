//! Classes, contextual attributes, and prompt rendering.
//!
//! A schema describes the whole prompt space: the class vocabulary, a base
//! template with one `{class}` placeholder, and an ordered list of
//! contextual attributes. Every attribute value maps to a uniform
//! distribution over textual descriptions. Prompts are rendered for a
//! `(class, combination)` pair by crossing the description lists of the
//! chosen values.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::{Alphanumeric, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CLASS_PLACEHOLDER: &str = "{class}";

/// Largest number of description choices averaged per combination. Larger
/// cross products are sampled down to this many.
pub const MAX_DESCRIPTION_CHOICES: usize = 256;

/// Fixed seed for the description-choice sampler.
const DESCRIPTION_SAMPLING_SEED: u64 = 0x5eed_d35c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderingMode {
    /// Base template followed by comma-separated descriptions.
    #[default]
    Concat,
    /// Each description is a full template with its own `{class}`.
    FullTemplate,
}

/// Ordered class names; the class id is the position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassVocabulary {
    names: Vec<String>,
}

impl ClassVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::schema(format!("classes[{i}]"), "class name is empty"));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::schema(
                    format!("classes[{i}]"),
                    format!("duplicate class name `{name}`"),
                ));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, class_id: usize) -> Option<&str> {
        self.names.get(class_id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeValue {
    pub name: String,
    pub descriptions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextualAttribute {
    pub name: String,
    pub values: Vec<AttributeValue>,
}

impl ContextualAttribute {
    pub fn value_index(&self, value_name: &str) -> Option<usize> {
        self.values.iter().position(|v| v.name == value_name)
    }
}

/// One value index per attribute, in schema attribute order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttributeCombination(pub Vec<usize>);

impl AttributeCombination {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

impl fmt::Display for AttributeCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// On-disk layout of a schema file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaFile {
    base_template: String,
    #[serde(default)]
    rendering_mode: RenderingMode,
    classes: Vec<String>,
    #[serde(default)]
    attributes: Vec<ContextualAttribute>,
}

/// A validated prompt space. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct AttributeSchema {
    base_template: String,
    rendering_mode: RenderingMode,
    classes: ClassVocabulary,
    attributes: Vec<ContextualAttribute>,
}

impl TryFrom<SchemaFile> for AttributeSchema {
    type Error = Error;

    fn try_from(file: SchemaFile) -> Result<Self> {
        AttributeSchema::new(
            file.base_template,
            file.rendering_mode,
            file.classes,
            file.attributes,
        )
    }
}

impl From<AttributeSchema> for SchemaFile {
    fn from(schema: AttributeSchema) -> Self {
        SchemaFile {
            base_template: schema.base_template,
            rendering_mode: schema.rendering_mode,
            classes: schema.classes.names,
            attributes: schema.attributes,
        }
    }
}

impl AttributeSchema {
    pub fn new(
        base_template: String,
        rendering_mode: RenderingMode,
        classes: Vec<String>,
        attributes: Vec<ContextualAttribute>,
    ) -> Result<Self> {
        if base_template.matches(CLASS_PLACEHOLDER).count() != 1 {
            return Err(Error::schema(
                "base_template",
                format!("must contain `{CLASS_PLACEHOLDER}` exactly once"),
            ));
        }
        let classes = ClassVocabulary::new(classes)?;
        validate_attributes(&attributes, rendering_mode)?;
        Ok(Self {
            base_template,
            rendering_mode,
            classes,
            attributes,
        })
    }

    /// Replaces the class list, keeping template and attributes.
    pub fn with_classes(self, classes: Vec<String>) -> Result<Self> {
        Ok(Self {
            classes: ClassVocabulary::new(classes)?,
            ..self
        })
    }

    pub fn base_template(&self) -> &str {
        &self.base_template
    }

    pub fn rendering_mode(&self) -> RenderingMode {
        self.rendering_mode
    }

    pub fn classes(&self) -> &ClassVocabulary {
        &self.classes
    }

    pub fn attributes(&self) -> &[ContextualAttribute] {
        &self.attributes
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn attribute_sizes(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.values.len()).collect()
    }

    /// Size of the combination lattice, `Π |values|`. `None` on overflow.
    pub fn combination_count(&self) -> Option<usize> {
        self.attributes
            .iter()
            .try_fold(1usize, |acc, a| acc.checked_mul(a.values.len()))
    }

    /// Lexicographic position of `combo` in the lattice.
    pub fn combo_index(&self, combo: &AttributeCombination) -> Result<usize> {
        self.check_combo(combo)?;
        Ok(combo
            .0
            .iter()
            .zip(&self.attributes)
            .fold(0, |acc, (&v, a)| acc * a.values.len() + v))
    }

    /// Inverse of [`combo_index`](Self::combo_index).
    pub fn combination(&self, mut index: usize) -> AttributeCombination {
        let mut out = vec![0; self.attributes.len()];
        for (slot, attr) in out.iter_mut().zip(&self.attributes).rev() {
            let n = attr.values.len();
            *slot = index % n;
            index /= n;
        }
        AttributeCombination(out)
    }

    pub fn check_combo(&self, combo: &AttributeCombination) -> Result<()> {
        if combo.0.len() != self.attributes.len() {
            return Err(Error::Invalid(format!(
                "combination {combo} has {} entries, schema has {} attributes",
                combo.0.len(),
                self.attributes.len()
            )));
        }
        for (i, (&v, attr)) in combo.0.iter().zip(&self.attributes).enumerate() {
            if v >= attr.values.len() {
                return Err(Error::Invalid(format!(
                    "combination {combo}: value {v} out of range for attribute {i} (`{}`)",
                    attr.name
                )));
            }
        }
        Ok(())
    }

    /// Symbolic value names for a combination.
    pub fn value_names(&self, combo: &AttributeCombination) -> Vec<&str> {
        combo
            .0
            .iter()
            .zip(&self.attributes)
            .map(|(&v, a)| a.values[v].name.as_str())
            .collect()
    }

    /// Same attributes and template, with every class replaced by a single
    /// placeholder word. Scores against these prompts are class-agnostic.
    pub fn class_agnostic(&self, placeholder: &str) -> Result<Self> {
        Self::new(
            self.base_template.clone(),
            self.rendering_mode,
            vec![placeholder.to_string()],
            self.attributes.clone(),
        )
    }

    /// Same classes and template with no contextual attributes.
    pub fn without_attributes(&self) -> Self {
        Self {
            base_template: self.base_template.clone(),
            rendering_mode: self.rendering_mode,
            classes: self.classes.clone(),
            attributes: Vec::new(),
        }
    }

    /// Keeps only the named attributes, in schema order.
    pub fn select_attributes(&self, names: &[&str]) -> Result<Self> {
        for name in names {
            if self.attribute_index(name).is_none() {
                return Err(Error::schema(
                    "attributes",
                    format!("no attribute named `{name}`"),
                ));
            }
        }
        Ok(Self {
            attributes: self
                .attributes
                .iter()
                .filter(|a| names.contains(&a.name.as_str()))
                .cloned()
                .collect(),
            ..self.clone()
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn validate_attributes(attributes: &[ContextualAttribute], mode: RenderingMode) -> Result<()> {
    if mode == RenderingMode::FullTemplate && attributes.len() > 1 {
        return Err(Error::schema(
            "attributes",
            "full_template mode supports at most one attribute",
        ));
    }
    let mut names = HashSet::new();
    for (ai, attr) in attributes.iter().enumerate() {
        let at = format!("attributes[{ai}]");
        if !names.insert(attr.name.as_str()) {
            return Err(Error::schema(
                format!("{at}.name"),
                format!("duplicate attribute name `{}`", attr.name),
            ));
        }
        if attr.values.is_empty() {
            return Err(Error::schema(format!("{at}.values"), "attribute has no values"));
        }
        let mut value_names = HashSet::new();
        for (vi, value) in attr.values.iter().enumerate() {
            let at = format!("{at}.values[{vi}]");
            if !value_names.insert(value.name.as_str()) {
                return Err(Error::schema(
                    format!("{at}.name"),
                    format!("duplicate value name `{}`", value.name),
                ));
            }
            if value.descriptions.is_empty() {
                return Err(Error::schema(
                    format!("{at}.descriptions"),
                    "description list is empty",
                ));
            }
            let mut seen = HashSet::new();
            for (di, desc) in value.descriptions.iter().enumerate() {
                if !seen.insert(desc.as_str()) {
                    return Err(Error::schema(
                        format!("{at}.descriptions[{di}]"),
                        format!("duplicate description `{desc}`"),
                    ));
                }
                if mode == RenderingMode::FullTemplate
                    && desc.matches(CLASS_PLACEHOLDER).count() != 1
                {
                    return Err(Error::schema(
                        format!("{at}.descriptions[{di}]"),
                        format!("full_template description must contain `{CLASS_PLACEHOLDER}` exactly once"),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Reads and validates a schema file.
pub fn load_schema(path: impl AsRef<Path>) -> Result<AttributeSchema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_schema(schema: &AttributeSchema, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(schema).expect("schema serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Iterator over the combination lattice in lexicographic order (last
/// attribute varies fastest).
#[derive(Debug, Clone)]
pub struct Combinations {
    sizes: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl Iterator for Combinations {
    type Item = AttributeCombination;

    fn next(&mut self) -> Option<Self::Item> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut advanced = false;
        for i in (0..succ.len()).rev() {
            succ[i] += 1;
            if succ[i] < self.sizes[i] {
                advanced = true;
                break;
            }
            succ[i] = 0;
        }
        if advanced {
            self.next = Some(succ);
        }
        Some(AttributeCombination(current))
    }
}

pub fn enumerate_combinations(schema: &AttributeSchema) -> Combinations {
    let sizes = schema.attribute_sizes();
    Combinations {
        next: Some(vec![0; sizes.len()]),
        sizes,
    }
}

/// The description lists picked out by a combination, in attribute order.
fn description_lists<'a>(
    schema: &'a AttributeSchema,
    combo: &AttributeCombination,
) -> Vec<&'a [String]> {
    combo
        .0
        .iter()
        .zip(&schema.attributes)
        .map(|(&v, a)| a.values[v].descriptions.as_slice())
        .collect()
}

/// Number of description choices in the full cross product for `combo`.
pub fn description_choice_count(schema: &AttributeSchema, combo: &AttributeCombination) -> usize {
    description_lists(schema, combo)
        .iter()
        .fold(1usize, |acc, l| acc.saturating_mul(l.len()))
}

/// Description-choice indices averaged for `combo`: the full cross product
/// when it has at most [`MAX_DESCRIPTION_CHOICES`] elements, otherwise a
/// fixed-seed uniform sample of that many, ascending.
pub fn description_choices(schema: &AttributeSchema, combo: &AttributeCombination) -> Vec<usize> {
    let total = description_choice_count(schema, combo);
    if total <= MAX_DESCRIPTION_CHOICES {
        return (0..total).collect();
    }
    let combo_index = schema.combo_index(combo).unwrap_or(0) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(DESCRIPTION_SAMPLING_SEED ^ combo_index);
    let mut picked =
        rand::seq::index::sample(&mut rng, total, MAX_DESCRIPTION_CHOICES).into_vec();
    picked.sort_unstable();
    picked
}

fn strip_terminal(s: &str) -> &str {
    s.trim_end().trim_end_matches('.').trim_end()
}

/// Renders one prompt: the `desc_index`-th element of the description cross
/// product for `combo`, decoded in mixed radix with the last attribute
/// varying fastest.
pub fn render_prompt(
    schema: &AttributeSchema,
    class_id: usize,
    combo: &AttributeCombination,
    desc_index: usize,
) -> Result<String> {
    let class_name = schema.classes.name(class_id).ok_or_else(|| {
        Error::Invalid(format!(
            "class id {class_id} out of range ({} classes)",
            schema.classes.len()
        ))
    })?;
    schema.check_combo(combo)?;
    let lists = description_lists(schema, combo);
    let total = lists.iter().fold(1usize, |acc, l| acc.saturating_mul(l.len()));
    if desc_index >= total {
        return Err(Error::Invalid(format!(
            "description index {desc_index} out of range ({total} choices)"
        )));
    }
    let mut chosen = vec![""; lists.len()];
    let mut rem = desc_index;
    for (slot, list) in chosen.iter_mut().zip(&lists).rev() {
        *slot = &list[rem % list.len()];
        rem /= list.len();
    }

    let mut text = match schema.rendering_mode {
        RenderingMode::Concat => {
            let mut text = strip_terminal(&schema.base_template.replace(CLASS_PLACEHOLDER, class_name))
                .to_string();
            for desc in chosen.iter().map(|d| strip_terminal(d)).filter(|d| !d.is_empty()) {
                text.push_str(", ");
                text.push_str(desc);
            }
            text
        }
        RenderingMode::FullTemplate => {
            let template = chosen.first().copied().unwrap_or(&schema.base_template);
            if !template.contains(CLASS_PLACEHOLDER) {
                return Err(Error::schema(
                    "descriptions",
                    format!("full_template description `{template}` lacks `{CLASS_PLACEHOLDER}`"),
                ));
            }
            strip_terminal(&template.replace(CLASS_PLACEHOLDER, class_name)).to_string()
        }
    };
    text.push('.');
    Ok(text)
}

/// All prompts averaged for `(class_id, combo)`, in description-index order.
pub fn render_prompts(
    schema: &AttributeSchema,
    class_id: usize,
    combo: &AttributeCombination,
) -> Result<Vec<String>> {
    schema.check_combo(combo)?;
    description_choices(schema, combo)
        .into_iter()
        .map(|d| render_prompt(schema, class_id, combo, d))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub class_id: usize,
    pub combo_index: usize,
    pub desc_index: usize,
    pub text: String,
}

impl ManifestEntry {
    pub fn make_id(class_id: usize, combo_index: usize, desc_index: usize) -> String {
        format!("{class_id}:{combo_index}:{desc_index}")
    }
}

/// Every rendered prompt of a schema, with positional ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptManifest {
    pub entries: Vec<ManifestEntry>,
}

impl PromptManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        for entry in &self.entries {
            serde_json::to_writer(&mut *out, entry)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
            entries.push(entry);
        }
        Ok(Self { entries })
    }
}

/// Renders the full manifest: classes outermost, then combinations, then
/// description choices. Output is deterministic.
pub fn render_manifest(schema: &AttributeSchema) -> Result<PromptManifest> {
    let combos: Vec<_> = enumerate_combinations(schema).collect();
    let choices: Vec<Vec<usize>> = combos
        .iter()
        .map(|c| description_choices(schema, c))
        .collect();
    let mut entries = Vec::new();
    for class_id in 0..schema.classes.len() {
        for (combo_index, (combo, descs)) in combos.iter().zip(&choices).enumerate() {
            for &desc_index in descs {
                entries.push(ManifestEntry {
                    id: ManifestEntry::make_id(class_id, combo_index, desc_index),
                    class_id,
                    combo_index,
                    desc_index,
                    text: render_prompt(schema, class_id, combo, desc_index)?,
                });
            }
        }
    }
    Ok(PromptManifest { entries })
}

/// Whether any combination's description cross product was sampled down.
pub fn uses_description_sampling(schema: &AttributeSchema) -> bool {
    enumerate_combinations(schema)
        .any(|c| description_choice_count(schema, &c) > MAX_DESCRIPTION_CHOICES)
}

/// Replaces every word of every non-empty attribute description with a
/// random alphanumeric token of the same character length. Whitespace
/// layout, class names, and the base template are untouched, as is any
/// `{class}` placeholder inside a full-template description.
pub fn randomize_descriptions(schema: &AttributeSchema, seed: u64) -> AttributeSchema {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = schema.clone();
    for attr in &mut out.attributes {
        for value in &mut attr.values {
            let mut fresh: Vec<String> = Vec::with_capacity(value.descriptions.len());
            for desc in &value.descriptions {
                let mut candidate = scramble(desc, &mut rng);
                // Short descriptions can collide; redraw to keep the list duplicate-free.
                while fresh.contains(&candidate) {
                    candidate = scramble(desc, &mut rng);
                }
                fresh.push(candidate);
            }
            value.descriptions = fresh;
        }
    }
    out
}

fn scramble(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while !rest.is_empty() {
        if let Some(tail) = rest.strip_prefix(CLASS_PLACEHOLDER) {
            out.push_str(CLASS_PLACEHOLDER);
            rest = tail;
            continue;
        }
        let ch = rest.chars().next().expect("non-empty");
        if ch.is_whitespace() {
            out.push(ch);
        } else {
            out.push(char::from(Alphanumeric.sample(rng)));
        }
        rest = &rest[ch.len_utf8()..];
    }
    out
}
