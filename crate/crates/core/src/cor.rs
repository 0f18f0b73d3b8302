//! Chain-of-reasoning (CoR) responses: the document model, a tolerant parser
//! for raw model output and the canonical serializer used for training data.
//!
//! Canonical form:
//!
//! ```text
//! Step 1 — Identify Reference Object: <text>
//! Step 2 — Determine Goal's Subtype: <text>
//! Step 3 — Define Target Area: <text>
//! Step 4 — Generate Output: <text>
//! [(x, y), ...]
//! ```
//!
//! The parser also accepts unnumbered or `(k)`-numbered prose labels, curly
//! apostrophes, markdown bold around the header, and round outer brackets on
//! the coordinate list.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorError {
    #[error("point {0} lies outside the unit square")]
    OutOfRange(usize),
    #[error("coordinate ({x}, {y}) outside [0, 1]")]
    InvalidPoint { x: f64, y: f64 },
    #[error("document is incomplete and cannot be serialized")]
    IncompleteDocument,
    #[error("step text for {0} is empty")]
    EmptyStep(StepKind),
}

/// The four reasoning steps, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StepKind {
    IdentifyReference,
    DetermineSubtype,
    DefineSearchSpace,
    GenerateOutput,
}

impl StepKind {
    pub const ALL: [StepKind; 4] = [
        StepKind::IdentifyReference,
        StepKind::DetermineSubtype,
        StepKind::DefineSearchSpace,
        StepKind::GenerateOutput,
    ];

    /// 1-based canonical position.
    pub fn ordinal(self) -> usize {
        match self {
            StepKind::IdentifyReference => 1,
            StepKind::DetermineSubtype => 2,
            StepKind::DefineSearchSpace => 3,
            StepKind::GenerateOutput => 4,
        }
    }

    /// Header label used by the serializer.
    pub fn label(self) -> &'static str {
        match self {
            StepKind::IdentifyReference => "Identify Reference Object",
            StepKind::DetermineSubtype => "Determine Goal's Subtype",
            StepKind::DefineSearchSpace => "Define Target Area",
            StepKind::GenerateOutput => "Generate Output",
        }
    }

    // Longest first, so a longer alias wins over its own prefix.
    fn aliases(self) -> &'static [&'static str] {
        match self {
            StepKind::IdentifyReference => &[
                "identifying the reference objects",
                "identify the reference objects",
                "identifying the reference object",
                "identify the reference object",
                "identifying reference objects",
                "identifying reference object",
                "identify reference objects",
                "identify reference object",
                "identify reference",
            ],
            StepKind::DetermineSubtype => &[
                "determining the goal's subtype",
                "determine the goal's subtype",
                "determining goal's subtype",
                "determine goal's subtype",
                "determine goal subtype",
                "determine subtype",
            ],
            StepKind::DefineSearchSpace => &[
                "defining the specific target area",
                "define the specific target area",
                "defining the target area",
                "define the search space",
                "define the target area",
                "define search space",
                "define target area",
            ],
            StepKind::GenerateOutput => &[
                "explaining point generation",
                "explain point generation",
                "generating the output",
                "generate the output",
                "generating output",
                "generate output",
            ],
        }
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AffordanceSubtype {
    PlacementAffordance,
    ObjectReference,
    FreeSpaceReference,
    Other(String),
}

impl AffordanceSubtype {
    pub fn label(&self) -> &str {
        match self {
            AffordanceSubtype::PlacementAffordance => "Placement Affordance",
            AffordanceSubtype::ObjectReference => "Object Reference",
            AffordanceSubtype::FreeSpaceReference => "Free Space Reference",
            AffordanceSubtype::Other(s) => s,
        }
    }

    fn from_phrase(phrase: &str) -> Option<Self> {
        let norm: String = phrase
            .to_ascii_lowercase()
            .replace('-', " ")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        match norm.as_str() {
            "placement affordance" => Some(AffordanceSubtype::PlacementAffordance),
            "object reference" => Some(AffordanceSubtype::ObjectReference),
            "free space reference" => Some(AffordanceSubtype::FreeSpaceReference),
            _ => None,
        }
    }

    /// Subtype named by the text of a DetermineSubtype step.
    ///
    /// A quoted phrase takes precedence; otherwise the known subtype names are
    /// searched for, and failing that the first sentence is kept verbatim.
    pub fn from_step_text(text: &str) -> Option<Self> {
        let text = text.trim();
        if text.is_empty() {
            return None;
        }
        if let Some(q) = first_quoted(text) {
            return Some(Self::from_phrase(q).unwrap_or_else(|| AffordanceSubtype::Other(q.to_string())));
        }
        let lower = text.to_ascii_lowercase().replace('-', " ");
        for (needle, st) in [
            ("placement affordance", AffordanceSubtype::PlacementAffordance),
            ("free space reference", AffordanceSubtype::FreeSpaceReference),
            ("object reference", AffordanceSubtype::ObjectReference),
        ] {
            if lower.contains(needle) {
                return Some(st);
            }
        }
        let sentence = text
            .split_terminator(['.', '!', '?'])
            .map(str::trim)
            .find(|s| !s.is_empty())
            .unwrap_or(text);
        Some(AffordanceSubtype::Other(sentence.to_string()))
    }
}

impl fmt::Display for AffordanceSubtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn first_quoted(text: &str) -> Option<&str> {
    for (open, close) in [('"', '"'), ('\u{201c}', '\u{201d}')] {
        if let Some(start) = text.find(open) {
            let rest = &text[start + open.len_utf8()..];
            if let Some(end) = rest.find(close) {
                let q = rest[..end].trim();
                if !q.is_empty() {
                    return Some(q);
                }
            }
        }
    }
    None
}

/// A normalized image point: fractions of width and height in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Result<Self, CorError> {
        if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
            Ok(Point { x, y })
        } else {
            Err(CorError::InvalidPoint { x, y })
        }
    }

    pub fn clamped(x: f64, y: f64) -> Self {
        Point {
            x: x.clamp(0.0, 1.0),
            y: y.clamp(0.0, 1.0),
        }
    }
}

impl TryFrom<[f64; 2]> for Point {
    type Error = CorError;
    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        Point::new(v[0], v[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Ordered predicted or ground-truth points.
///
/// `unparsed` marks the state where the producing operation found no list at
/// all; it is distinct from a parsed list that happened to be empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointSet {
    pub points: Vec<Point>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparsed: bool,
}

impl PointSet {
    pub fn new(points: Vec<Point>) -> Self {
        PointSet {
            points,
            unparsed: false,
        }
    }

    pub fn unparsed() -> Self {
        PointSet {
            points: Vec::new(),
            unparsed: true,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }

    /// Canonical list text, three decimal places, square brackets.
    pub fn to_canonical(&self) -> String {
        let body: Vec<String> = self
            .points
            .iter()
            .map(|p| format!("({:.3}, {:.3})", p.x, p.y))
            .collect();
        format!("[{}]", body.join(", "))
    }
}

impl FromIterator<Point> for PointSet {
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        PointSet::new(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangePolicy {
    #[default]
    Clamp,
    Reject,
}

/// Structural findings reported alongside a parse. None of them are fatal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    NoPointList,
    MalformedTuple { offset: usize },
    Clamped { index: usize },
    OutOfRange { index: usize },
    MissingStep { step: StepKind },
    DuplicateStep { step: StepKind },
    EmptyStep { step: StepKind },
    Reordered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningStep {
    pub kind: StepKind,
    pub text: String,
    pub ordinal: usize,
    /// Character span (header through end of text) in the source response.
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoRDocument {
    pub steps: Vec<ReasoningStep>,
    pub subtype: Option<AffordanceSubtype>,
    pub points: PointSet,
    pub raw_text: String,
    pub complete: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl CoRDocument {
    /// Builds a complete document from the four step texts in canonical order.
    pub fn from_parts(
        texts: [String; 4],
        subtype: AffordanceSubtype,
        points: PointSet,
    ) -> Result<Self, CorError> {
        let mut steps = Vec::with_capacity(4);
        for (kind, text) in StepKind::ALL.into_iter().zip(texts) {
            let text = text.trim().to_string();
            if text.is_empty() {
                return Err(CorError::EmptyStep(kind));
            }
            steps.push(ReasoningStep {
                kind,
                text,
                ordinal: kind.ordinal(),
                span: 0..0,
            });
        }
        let complete = !points.is_empty();
        Ok(CoRDocument {
            steps,
            subtype: Some(subtype),
            points,
            raw_text: String::new(),
            complete,
            diagnostics: Vec::new(),
        })
    }

    pub fn step(&self, kind: StepKind) -> Option<&ReasoningStep> {
        self.steps.iter().find(|s| s.kind == kind)
    }

    pub fn kinds(&self) -> Vec<StepKind> {
        self.steps.iter().map(|s| s.kind).collect()
    }
}

/// Points found in a response, plus where the list sat and what was fixed up.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedPoints {
    pub points: PointSet,
    /// Byte range of the final list in the input, when one was found.
    pub span: Option<Range<usize>>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Extracts the final coordinate list from a response.
pub fn parse_points(text: &str, policy: RangePolicy) -> Result<ParsedPoints, CorError> {
    let Some(list) = find_final_list(text) else {
        return Ok(ParsedPoints {
            points: PointSet::unparsed(),
            span: None,
            diagnostics: vec![Diagnostic::NoPointList],
        });
    };
    let mut diagnostics: Vec<Diagnostic> = list
        .malformed
        .iter()
        .map(|&offset| Diagnostic::MalformedTuple { offset })
        .collect();
    let mut points = Vec::with_capacity(list.tuples.len());
    for (i, &(x, y)) in list.tuples.iter().enumerate() {
        match Point::new(x, y) {
            Ok(p) => points.push(p),
            Err(_) => match policy {
                RangePolicy::Clamp => {
                    tracing::warn!(index = i, x, y, "clamped out-of-range point");
                    diagnostics.push(Diagnostic::Clamped { index: i });
                    points.push(Point::clamped(x, y));
                }
                RangePolicy::Reject => return Err(CorError::OutOfRange(i)),
            },
        }
    }
    Ok(ParsedPoints {
        points: PointSet::new(points),
        span: Some(list.span),
        diagnostics,
    })
}

struct FoundList {
    span: Range<usize>,
    tuples: Vec<(f64, f64)>,
    malformed: Vec<usize>,
}

struct Frame {
    open: char,
    pos: usize,
    has_children: bool,
    tuples: Vec<(f64, f64)>,
    malformed: Vec<usize>,
}

/// Single pass bracket scan. A list is any `[...]` or `(...)` with at least one
/// well-formed `(x, y)` tuple as a direct child; the one closing last wins.
fn find_final_list(text: &str) -> Option<FoundList> {
    let mut stack: Vec<Frame> = Vec::new();
    let mut last: Option<FoundList> = None;
    for (i, c) in text.char_indices() {
        match c {
            '[' | '(' => {
                if let Some(top) = stack.last_mut() {
                    top.has_children = true;
                }
                stack.push(Frame {
                    open: c,
                    pos: i,
                    has_children: false,
                    tuples: Vec::new(),
                    malformed: Vec::new(),
                });
            }
            ']' | ')' => {
                let want = if c == ']' { '[' } else { '(' };
                // Unmatched frames are discarded; each frame is popped once.
                while stack.last().is_some_and(|f| f.open != want) {
                    stack.pop();
                }
                let Some(frame) = stack.pop() else { continue };
                if frame.open == '(' && !frame.has_children {
                    let inner = &text[frame.pos + 1..i];
                    match parse_tuple(inner) {
                        Some(t) => {
                            if let Some(parent) = stack.last_mut() {
                                parent.tuples.push(t);
                            }
                        }
                        None => {
                            if inner.contains(',') {
                                if let Some(parent) = stack.last_mut() {
                                    parent.malformed.push(frame.pos);
                                }
                            }
                        }
                    }
                } else if !frame.tuples.is_empty() {
                    last = Some(FoundList {
                        span: frame.pos..i + 1,
                        tuples: frame.tuples,
                        malformed: frame.malformed,
                    });
                }
            }
            _ => {}
        }
    }
    last
}

fn parse_tuple(inner: &str) -> Option<(f64, f64)> {
    let (a, b) = inner.split_once(',')?;
    Some((parse_number(a)?, parse_number(b)?))
}

fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(k) => (&body[..k], Some(&body[k + 1..])),
        None => (body, None),
    };
    let digits = mantissa.chars().filter(|c| c.is_ascii_digit()).count();
    let dots = mantissa.chars().filter(|&c| c == '.').count();
    if digits == 0 || dots > 1 || digits + dots != mantissa.len() {
        return None;
    }
    if let Some(e) = exponent {
        let e = e.strip_prefix(['+', '-']).unwrap_or(e);
        if e.is_empty() || !e.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

struct Header {
    kind: StepKind,
    start: usize,
    content_start: usize,
}

fn match_alias(rest: &str, alias: &str) -> Option<usize> {
    let mut chars = rest.char_indices();
    for a in alias.chars() {
        let (_, c) = chars.next()?;
        let ok = if a == '\'' {
            c == '\'' || c == '\u{2019}'
        } else {
            c.eq_ignore_ascii_case(&a)
        };
        if !ok {
            return None;
        }
    }
    let consumed = chars.next().map_or(rest.len(), |(k, _)| k);
    // Word boundary after the label.
    if rest[consumed..].chars().next().is_some_and(char::is_alphanumeric) {
        return None;
    }
    Some(consumed)
}

fn skip_ws(s: &str, at: usize) -> usize {
    at + (s[at..].len() - s[at..].trim_start_matches([' ', '\t']).len())
}

/// Recognizes a step header at the start of `line`; returns kind and the byte
/// offset (within `line`) where the step text begins.
fn match_header(line: &str) -> Option<(StepKind, usize)> {
    let mut at = skip_ws(line, 0);
    let trimmed = |at: usize| &line[at..];
    for deco in ["**", "#"] {
        while trimmed(at).starts_with(deco) {
            at = skip_ws(line, at + deco.len());
        }
    }
    // Optional numbering: "Step 2 —", "Step 2:", "(2)", "2." or "2)".
    let rest = trimmed(at);
    if rest.get(..4).is_some_and(|s| s.eq_ignore_ascii_case("step")) {
        let mut k = skip_ws(line, at + 4);
        let digits = line[k..].bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 {
            k = skip_ws(line, k + digits);
            if let Some(c) = line[k..].chars().next() {
                if matches!(c, '\u{2014}' | '\u{2013}' | '-' | ':' | '.' | ')') {
                    k = skip_ws(line, k + c.len_utf8());
                }
            }
            at = k;
        }
    } else if let Some(r) = rest.strip_prefix('(') {
        let digits = r.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 && r[digits..].starts_with(')') {
            at = skip_ws(line, at + digits + 2);
        }
    } else {
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 && (rest[digits..].starts_with('.') || rest[digits..].starts_with(')')) {
            at = skip_ws(line, at + digits + 1);
        }
    }
    let rest = trimmed(at);
    for kind in StepKind::ALL {
        for alias in kind.aliases() {
            if let Some(n) = match_alias(rest, alias) {
                let mut k = at + n;
                if line[k..].starts_with("**") {
                    k += 2;
                }
                k = skip_ws(line, k);
                if line[k..].starts_with(':') {
                    k += 1;
                    if line[k..].starts_with("**") {
                        k += 2;
                    }
                    return Some((kind, k));
                }
                return None;
            }
        }
    }
    None
}

fn find_headers(text: &str) -> Vec<Header> {
    let mut headers = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if let Some((kind, content)) = match_header(line) {
            headers.push(Header {
                kind,
                start: offset,
                content_start: offset + content,
            });
        }
        offset += line.len();
    }
    headers
}

/// Segments a raw response into steps, subtype and points. Never fails;
/// defects are listed in `diagnostics` and leave `complete` false.
pub fn parse_document(text: &str, policy: RangePolicy) -> CoRDocument {
    let mut diagnostics = Vec::new();
    let (points, list_span) = match parse_points(text, policy) {
        Ok(p) => {
            diagnostics.extend(p.diagnostics);
            (p.points, p.span)
        }
        Err(CorError::OutOfRange(index)) => {
            diagnostics.push(Diagnostic::OutOfRange { index });
            (PointSet::unparsed(), None)
        }
        Err(_) => (PointSet::unparsed(), None),
    };

    let headers = find_headers(text);
    let char_index = CharIndex::new(text);
    let mut steps: Vec<ReasoningStep> = Vec::with_capacity(4);
    for (i, h) in headers.iter().enumerate() {
        let mut end = headers.get(i + 1).map_or(text.len(), |n| n.start);
        if let Some(span) = &list_span {
            if span.start >= h.content_start && span.start < end {
                end = span.start;
            }
        }
        let body = if h.content_start <= end {
            text[h.content_start..end].trim()
        } else {
            ""
        };
        if body.is_empty() {
            diagnostics.push(Diagnostic::EmptyStep { step: h.kind });
            continue;
        }
        if steps.iter().any(|s| s.kind == h.kind) {
            diagnostics.push(Diagnostic::DuplicateStep { step: h.kind });
            continue;
        }
        steps.push(ReasoningStep {
            kind: h.kind,
            text: body.to_string(),
            ordinal: 0,
            span: char_index.get(h.start)..char_index.get(end),
        });
    }
    if steps.windows(2).any(|w| w[0].kind > w[1].kind) {
        diagnostics.push(Diagnostic::Reordered);
        steps.sort_by_key(|s| s.kind);
    }
    for (i, s) in steps.iter_mut().enumerate() {
        s.ordinal = i + 1;
    }
    for kind in StepKind::ALL {
        if !steps.iter().any(|s| s.kind == kind) {
            diagnostics.push(Diagnostic::MissingStep { step: kind });
        }
    }
    let subtype = steps
        .iter()
        .find(|s| s.kind == StepKind::DetermineSubtype)
        .and_then(|s| AffordanceSubtype::from_step_text(&s.text));
    let complete = steps.len() == 4 && !points.is_empty();
    CoRDocument {
        steps,
        subtype,
        points,
        raw_text: text.to_string(),
        complete,
        diagnostics,
    }
}

/// Byte offset to character offset lookup, linear over ascending queries.
struct CharIndex<'a> {
    text: &'a str,
    cursor: std::cell::Cell<(usize, usize)>,
}

impl<'a> CharIndex<'a> {
    fn new(text: &'a str) -> Self {
        CharIndex {
            text,
            cursor: std::cell::Cell::new((0, 0)),
        }
    }

    fn get(&self, byte: usize) -> usize {
        let (mut b, mut c) = self.cursor.get();
        if byte < b {
            (b, c) = (0, 0);
        }
        c += self.text[b..byte].chars().count();
        b = byte;
        self.cursor.set((b, c));
        c
    }
}

/// Canonical text for a complete document.
pub fn serialize(doc: &CoRDocument) -> Result<String, CorError> {
    if !doc.complete || doc.steps.len() != 4 || doc.points.is_empty() {
        return Err(CorError::IncompleteDocument);
    }
    let mut out = String::new();
    for kind in StepKind::ALL {
        let step = doc.step(kind).ok_or(CorError::IncompleteDocument)?;
        let mut body = step.text.split_whitespace().collect::<Vec<_>>().join(" ");
        if kind == StepKind::DetermineSubtype {
            if let Some(subtype) = &doc.subtype {
                if AffordanceSubtype::from_step_text(&body).as_ref() != Some(subtype) {
                    body.push_str(&format!(" Subtype: \"{}\".", subtype.label()));
                }
            }
        }
        out.push_str(&format!("Step {} \u{2014} {}: {}\n", kind.ordinal(), kind.label(), body));
    }
    out.push_str(&doc.points.to_canonical());
    Ok(out)
}
