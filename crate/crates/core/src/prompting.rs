//! Prompt rendering for caption and image generation.
//!
//! Templates live in `templates/` as plain text. A line consisting of a block
//! marker stands for non-text content:
//!
//! | marker                  | expands to                                        |
//! | ----------------------- | ------------------------------------------------- |
//! | `{query-image}`         | the query image                                   |
//! | `{query-text}`          | the query caption                                 |
//! | `{merged-image}`        | example images (and the query image when captioning) stacked vertically |
//! | `{image-caption-pairs}` | `image_1, text_1, ..., image_k, text_k`           |
//!
//! The text between markers becomes instruction parts after the inline
//! placeholders `{num}`, `{image_num}`, `{caption_num}` and `{captions}` are
//! filled in; leading and trailing newlines of each text segment are dropped.
//! In the [`Dialect::InterleavedWithSystem`] dialect a text segment that opens
//! the template is sent as the system message.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Cursor};
use std::path::PathBuf;
use std::str::FromStr;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Modality, QueryRecord};
use crate::pairing::ExamplePair;

/// How examples are laid out for a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dialect {
    /// Single-image models: one vertically merged image plus numbered captions.
    MergedImage,
    /// Multi-image models: interleaved example images and captions.
    Interleaved,
    /// Interleaved, with the persona line sent as a system message.
    InterleavedWithSystem,
}

impl Dialect {
    pub fn as_str(self) -> &'static str {
        match self {
            Dialect::MergedImage => "merged-image",
            Dialect::Interleaved => "interleaved",
            Dialect::InterleavedWithSystem => "interleaved-system",
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dialect {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "merged-image" => Ok(Dialect::MergedImage),
            "interleaved" => Ok(Dialect::Interleaved),
            "interleaved-system" => Ok(Dialect::InterleavedWithSystem),
            other => Err(RenderError::UnknownDialect(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenTask {
    Caption,
    ImageGen,
}

impl GenTask {
    pub fn query_modality(self) -> Modality {
        match self {
            GenTask::Caption => Modality::Image,
            GenTask::ImageGen => Modality::Text,
        }
    }

    /// Modality of the generator output, and of the retrieved candidates.
    pub fn output_modality(self) -> Modality {
        self.query_modality().opposite()
    }
}

impl FromStr for GenTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "caption" => Ok(GenTask::Caption),
            "image-gen" => Ok(GenTask::ImageGen),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("unknown dialect `{0}`")]
    UnknownDialect(String),
    #[error("image for `{did}` ({image_ref}) could not be read: {source}")]
    MissingImage {
        did: String,
        image_ref: String,
        #[source]
        source: io::Error,
    },
    #[error("image for `{did}` could not be decoded: {source}")]
    Decode {
        did: String,
        #[source]
        source: image::ImageError,
    },
    #[error("merged image could not be encoded: {0}")]
    Encode(#[source] image::ImageError),
    #[error("nothing to merge")]
    EmptyMerge,
    #[error("{task:?} prompt needs a {expected} query, got {got}")]
    QueryModality {
        task: GenTask,
        expected: Modality,
        got: Modality,
    },
    #[error("template still contains `{0}` after substitution")]
    Unsubstituted(String),
}

/// Source of encoded image bytes, keyed by the `image_ref` stored in pools and
/// queries.
pub trait ImageLoader: Send + Sync {
    fn load(&self, image_ref: &str) -> io::Result<Vec<u8>>;
}

/// Resolves image refs relative to a root directory.
#[derive(Debug, Clone)]
pub struct DirLoader {
    pub root: PathBuf,
}

impl DirLoader {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl ImageLoader for DirLoader {
    fn load(&self, image_ref: &str) -> io::Result<Vec<u8>> {
        std::fs::read(self.root.join(image_ref))
    }
}

#[derive(Debug, Clone, Default)]
pub struct MemoryLoader {
    pub images: HashMap<String, Vec<u8>>,
}

impl MemoryLoader {
    pub fn insert(&mut self, image_ref: impl Into<String>, bytes: Vec<u8>) {
        self.images.insert(image_ref.into(), bytes);
    }
}

impl ImageLoader for MemoryLoader {
    fn load(&self, image_ref: &str) -> io::Result<Vec<u8>> {
        self.images
            .get(image_ref)
            .cloned()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, image_ref.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TextRole {
    /// Template-derived instruction text.
    Instruction,
    /// Caption of an in-context example.
    Example,
    /// The query caption (image generation).
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePart {
    /// Did of the image, or `merged` for a merged stack.
    pub source: String,
    pub media_type: String,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Text { text: String, role: TextRole },
    Image(ImagePart),
}

impl Part {
    pub fn is_image(&self) -> bool {
        matches!(self, Part::Image(_))
    }

    pub fn is_instruction(&self) -> bool {
        matches!(
            self,
            Part::Text {
                role: TextRole::Instruction,
                ..
            }
        )
    }
}

/// A rendered prompt: optional system message plus ordered parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub dialect: Dialect,
    pub task: GenTask,
    pub k: usize,
    pub system: Option<String>,
    pub parts: Vec<Part>,
}

impl PromptBundle {
    pub fn image_count(&self) -> usize {
        self.parts.iter().filter(|p| p.is_image()).count()
    }

    /// Parts other than instruction text: the example sequence and the query.
    pub fn content_parts(&self) -> impl Iterator<Item = &Part> {
        self.parts.iter().filter(|p| !p.is_instruction())
    }

    /// All text, system message included, in order.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.system.as_deref().into_iter().chain(self.parts.iter().filter_map(|p| match p {
            Part::Text { text, .. } => Some(text.as_str()),
            Part::Image(_) => None,
        }))
    }

    /// SHA-256 over a length-prefixed encoding of every field, hex encoded.
    /// Any byte change in text or image data changes the hash.
    pub fn content_hash(&self) -> String {
        fn field(h: &mut Sha256, bytes: &[u8]) {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        }
        let mut h = Sha256::new();
        field(&mut h, self.dialect.as_str().as_bytes());
        field(&mut h, format!("{:?}", self.task).as_bytes());
        h.update((self.k as u64).to_le_bytes());
        match &self.system {
            Some(s) => {
                h.update([1]);
                field(&mut h, s.as_bytes());
            }
            None => h.update([0]),
        }
        for part in &self.parts {
            match part {
                Part::Text { text, role } => {
                    h.update([b'T']);
                    field(&mut h, format!("{role:?}").as_bytes());
                    field(&mut h, text.as_bytes());
                }
                Part::Image(img) => {
                    h.update([b'I']);
                    field(&mut h, img.source.as_bytes());
                    field(&mut h, img.media_type.as_bytes());
                    field(&mut h, &img.data);
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// Human-readable rendering with images replaced by a one-line stub.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        if let Some(s) = &self.system {
            out.push_str("[system]\n");
            out.push_str(s);
            out.push('\n');
        }
        for part in &self.parts {
            match part {
                Part::Text { text, role } => {
                    out.push_str(match role {
                        TextRole::Instruction => "[instruction]\n",
                        TextRole::Example => "[example]\n",
                        TextRole::Query => "[query]\n",
                    });
                    out.push_str(text);
                    out.push('\n');
                }
                Part::Image(img) => {
                    out.push_str(&format!("[image {} {}]\n", img.source, img.media_type));
                }
            }
        }
        out
    }
}

/// Stacks images top to bottom, left-aligned. The output is as wide as the
/// widest input and as tall as all inputs together; uncovered pixels take
/// `background`.
pub fn merge_images(images: &[RgbImage], background: Rgb<u8>) -> Result<RgbImage, RenderError> {
    match images {
        [] => Err(RenderError::EmptyMerge),
        [single] => Ok(single.clone()),
        _ => {
            let width = images.iter().map(|i| i.width()).max().unwrap_or(0);
            let height = images.iter().map(|i| i.height()).sum();
            let mut out = RgbImage::from_pixel(width, height, background);
            let mut y = 0;
            for img in images {
                image::imageops::replace(&mut out, img, 0, y as i64);
                y += img.height();
            }
            Ok(out)
        }
    }
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, image::ImageError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

fn media_type(bytes: &[u8]) -> String {
    image::guess_format(bytes)
        .map(|f| f.to_mime_type().to_owned())
        .unwrap_or_else(|_| "application/octet-stream".to_owned())
}

/// Cuts an example list to its first `max_pairs` entries.
pub fn truncate_examples(examples: &[ExamplePair], max_pairs: usize) -> Vec<ExamplePair> {
    examples[..examples.len().min(max_pairs)].to_vec()
}

const CAPTION_ZERO_SHOT: &str = include_str!("../templates/caption_zero_shot.txt");
const CAPTION_MERGED: &str = include_str!("../templates/caption_merged_image.txt");
const CAPTION_INTERLEAVED: &str = include_str!("../templates/caption_interleaved.txt");
const CAPTION_INTERLEAVED_SYSTEM: &str =
    include_str!("../templates/caption_interleaved_system.txt");
const IMAGE_GEN_ZERO_SHOT: &str = include_str!("../templates/image_gen_zero_shot.txt");
const IMAGE_GEN_MERGED: &str = include_str!("../templates/image_gen_merged_image.txt");
const IMAGE_GEN_INTERLEAVED: &str = include_str!("../templates/image_gen_interleaved.txt");

/// Raw template text for a task, dialect and shot mode.
pub fn template(task: GenTask, dialect: Dialect, few_shot: bool) -> &'static str {
    match (task, few_shot, dialect) {
        (GenTask::Caption, false, _) => CAPTION_ZERO_SHOT,
        (GenTask::Caption, true, Dialect::MergedImage) => CAPTION_MERGED,
        (GenTask::Caption, true, Dialect::Interleaved) => CAPTION_INTERLEAVED,
        (GenTask::Caption, true, Dialect::InterleavedWithSystem) => CAPTION_INTERLEAVED_SYSTEM,
        (GenTask::ImageGen, false, _) => IMAGE_GEN_ZERO_SHOT,
        (GenTask::ImageGen, true, Dialect::MergedImage) => IMAGE_GEN_MERGED,
        (GenTask::ImageGen, true, _) => IMAGE_GEN_INTERLEAVED,
    }
}

enum Segment<'t> {
    Text(&'t str),
    QueryImage,
    QueryText,
    MergedImage,
    Pairs,
}

fn segments(template: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut text_start = 0;
    let mut offset = 0;
    for line in template.split_inclusive('\n') {
        let marker = match line.trim_end_matches('\n') {
            "{query-image}" => Some(Segment::QueryImage),
            "{query-text}" => Some(Segment::QueryText),
            "{merged-image}" => Some(Segment::MergedImage),
            "{image-caption-pairs}" => Some(Segment::Pairs),
            _ => None,
        };
        if let Some(m) = marker {
            out.push(Segment::Text(&template[text_start..offset]));
            out.push(m);
            text_start = offset + line.len();
        }
        offset += line.len();
    }
    out.push(Segment::Text(&template[text_start..]));
    out
}

fn fill(text: &str, vars: &[(&str, String)]) -> Result<String, RenderError> {
    let mut s = text.to_owned();
    for (name, value) in vars {
        s = s.replace(name, value);
    }
    if let Some(start) = s.find('{') {
        let end = s[start..].find('}').map_or(s.len(), |e| start + e + 1);
        return Err(RenderError::Unsubstituted(s[start..end].to_owned()));
    }
    Ok(s)
}

/// Renders prompts, pulling image bytes through an [`ImageLoader`].
pub struct PromptRenderer<'l> {
    loader: &'l dyn ImageLoader,
    background: Rgb<u8>,
}

impl<'l> PromptRenderer<'l> {
    pub fn new(loader: &'l dyn ImageLoader) -> Self {
        Self {
            loader,
            background: Rgb([0, 0, 0]),
        }
    }

    /// Fill colour for the right-hand margin of merged images (default black).
    pub fn with_background(mut self, background: Rgb<u8>) -> Self {
        self.background = background;
        self
    }

    fn load(&self, did: &str, image_ref: &str) -> Result<Vec<u8>, RenderError> {
        self.loader
            .load(image_ref)
            .map_err(|source| RenderError::MissingImage {
                did: did.to_owned(),
                image_ref: image_ref.to_owned(),
                source,
            })
    }

    fn image_part(&self, did: &str, image_ref: &str) -> Result<ImagePart, RenderError> {
        let data = self.load(did, image_ref)?;
        Ok(ImagePart {
            source: did.to_owned(),
            media_type: media_type(&data),
            data,
        })
    }

    fn decoded(&self, did: &str, image_ref: &str) -> Result<RgbImage, RenderError> {
        let data = self.load(did, image_ref)?;
        image::load_from_memory(&data)
            .map(|i| i.to_rgb8())
            .map_err(|source| RenderError::Decode {
                did: did.to_owned(),
                source,
            })
    }

    pub fn render_zero_shot(
        &self,
        query: &QueryRecord,
        task: GenTask,
        dialect: Dialect,
    ) -> Result<PromptBundle, RenderError> {
        self.render(query, &[], task, dialect)
    }

    /// Few-shot prompt; an empty example list gives the zero-shot prompt.
    pub fn render_few_shot(
        &self,
        query: &QueryRecord,
        examples: &[ExamplePair],
        task: GenTask,
        dialect: Dialect,
    ) -> Result<PromptBundle, RenderError> {
        self.render(query, examples, task, dialect)
    }

    fn render(
        &self,
        query: &QueryRecord,
        examples: &[ExamplePair],
        task: GenTask,
        dialect: Dialect,
    ) -> Result<PromptBundle, RenderError> {
        if query.modality != task.query_modality() {
            return Err(RenderError::QueryModality {
                task,
                expected: task.query_modality(),
                got: query.modality,
            });
        }
        let k = examples.len();
        let image_num = match task {
            GenTask::Caption => k + 1,
            GenTask::ImageGen => k,
        };
        let captions = examples
            .iter()
            .enumerate()
            .map(|(i, e)| format!("[{}] {}", i + 1, e.caption))
            .collect::<Vec<_>>()
            .join("\n");
        let vars = [
            ("{image_num}", image_num.to_string()),
            ("{caption_num}", k.to_string()),
            ("{num}", k.to_string()),
            ("{captions}", captions),
        ];

        let mut bundle = PromptBundle {
            dialect,
            task,
            k,
            system: None,
            parts: Vec::new(),
        };
        let segs = segments(template(task, dialect, k > 0));
        for (i, seg) in segs.iter().enumerate() {
            match seg {
                Segment::Text(raw) => {
                    let text = raw.trim_matches('\n');
                    if text.is_empty() {
                        continue;
                    }
                    let text = fill(text, &vars)?;
                    if i == 0 && dialect == Dialect::InterleavedWithSystem {
                        bundle.system = Some(text);
                    } else {
                        bundle.parts.push(Part::Text {
                            text,
                            role: TextRole::Instruction,
                        });
                    }
                }
                Segment::QueryImage => {
                    let part = self.image_part(&query.qid, &query.content)?;
                    bundle.parts.push(Part::Image(part));
                }
                Segment::QueryText => bundle.parts.push(Part::Text {
                    text: query.content.clone(),
                    role: TextRole::Query,
                }),
                Segment::Pairs => {
                    for e in examples {
                        let part = self.image_part(&e.image_did, &e.image_ref)?;
                        bundle.parts.push(Part::Image(part));
                        bundle.parts.push(Part::Text {
                            text: e.caption.clone(),
                            role: TextRole::Example,
                        });
                    }
                }
                Segment::MergedImage => {
                    let mut stack = examples
                        .iter()
                        .map(|e| self.decoded(&e.image_did, &e.image_ref))
                        .collect::<Result<Vec<_>, _>>()?;
                    if task == GenTask::Caption {
                        stack.push(self.decoded(&query.qid, &query.content)?);
                    }
                    let merged = merge_images(&stack, self.background)?;
                    bundle.parts.push(Part::Image(ImagePart {
                        source: "merged".into(),
                        media_type: "image/png".into(),
                        data: encode_png(&merged).map_err(RenderError::Encode)?,
                    }));
                }
            }
        }
        Ok(bundle)
    }
}
