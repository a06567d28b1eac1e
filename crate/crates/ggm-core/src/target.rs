//! Planar target models: convex polygons in the target plane plus a
//! pixelwise composition expression, with an XML spec format.
//!
//! A target is a set of convex polygons with vertices in the target
//! coordinate frame (z = 0, units of meters) and an expression that
//! combines the per-polygon binary images into the target image.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// A 2-D vertex in the target coordinate frame (meters, z implicitly 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex2 {
    pub x: f64,
    pub y: f64,
}

impl Vertex2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Orientation of a polygon's vertex ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winding {
    Ccw,
    Cw,
    Degenerate,
}

/// Twice the signed area of the polygon (shoelace sum).
fn shoelace(vertices: &[Vertex2]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    acc
}

/// Classifies the winding of a vertex loop by the sign of its signed area.
pub fn winding_orientation(vertices: &[Vertex2]) -> Winding {
    debug_assert!(vertices.len() >= 3);
    let area2 = shoelace(vertices);
    if area2 > 0.0 {
        Winding::Ccw
    } else if area2 < 0.0 {
        Winding::Cw
    } else {
        Winding::Degenerate
    }
}

/// Strict convexity test: every consecutive-edge cross product carries the
/// same strict sign. Collinear triples or repeated vertices fail.
pub fn convexity_check(vertices: &[Vertex2]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0i8;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let c = vertices[(i + 2) % n];
        let cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
        let s = if cross > 0.0 {
            1
        } else if cross < 0.0 {
            -1
        } else {
            return false;
        };
        if sign == 0 {
            sign = s;
        } else if s != sign {
            return false;
        }
    }
    true
}

/// An ordered list of vertices. Geometric invariants (strict convexity,
/// CCW winding) are checked by [`validate_target`], not at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Vertex2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vertex2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon {
                index: 0,
                reason: format!("needs at least 3 vertices, got {}", vertices.len()),
            });
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Vertex2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Reverses the vertex order in place (flips CW to CCW and back).
    pub fn reverse(&mut self) {
        self.vertices.reverse();
    }

    pub fn winding(&self) -> Winding {
        winding_orientation(&self.vertices)
    }

    pub fn is_strictly_convex(&self) -> bool {
        convexity_check(&self.vertices)
    }
}

/// Pixelwise composition over polygon images. Leaves hold 0-based polygon
/// indices; the spec file syntax uses 1-based `P<i>` names.
#[derive(Debug, Clone, PartialEq)]
pub enum CompositionExpr {
    Poly(usize),
    Not(Box<CompositionExpr>),
    Or(Box<CompositionExpr>, Box<CompositionExpr>),
    And(Box<CompositionExpr>, Box<CompositionExpr>),
    Xor(Box<CompositionExpr>, Box<CompositionExpr>),
}

impl CompositionExpr {
    /// Parses an infix expression over `P<i>` with `|`, `&`, `^`, `!` and
    /// parentheses. Precedence, loosest first: `|`, `^`, `&`, `!`.
    pub fn parse(text: &str) -> Result<Self> {
        let tokens = tokenize(text)?;
        let mut parser = ExprParser { tokens, pos: 0 };
        let expr = parser.parse_or()?;
        if parser.pos != parser.tokens.len() {
            return Err(Error::Composition(format!(
                "unexpected trailing token {:?}",
                parser.tokens[parser.pos]
            )));
        }
        Ok(expr)
    }

    /// Collects every referenced polygon index.
    pub fn referenced(&self, out: &mut Vec<usize>) {
        match self {
            CompositionExpr::Poly(i) => out.push(*i),
            CompositionExpr::Not(a) => a.referenced(out),
            CompositionExpr::Or(a, b) | CompositionExpr::And(a, b) | CompositionExpr::Xor(a, b) => {
                a.referenced(out);
                b.referenced(out);
            }
        }
    }

    pub fn max_index(&self) -> usize {
        let mut refs = Vec::new();
        self.referenced(&mut refs);
        refs.into_iter().max().unwrap_or(0)
    }

    fn precedence(&self) -> u8 {
        match self {
            CompositionExpr::Or(..) => 1,
            CompositionExpr::Xor(..) => 2,
            CompositionExpr::And(..) => 3,
            CompositionExpr::Not(..) => 4,
            CompositionExpr::Poly(..) => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        let prec = self.precedence();
        let parens = prec < parent;
        if parens {
            write!(f, "(")?;
        }
        match self {
            CompositionExpr::Poly(i) => write!(f, "P{}", i + 1)?,
            CompositionExpr::Not(a) => {
                write!(f, "!")?;
                a.fmt_prec(f, 4)?;
            }
            CompositionExpr::Or(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " | ")?;
                b.fmt_prec(f, 2)?;
            }
            CompositionExpr::Xor(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, " ^ ")?;
                b.fmt_prec(f, 3)?;
            }
            CompositionExpr::And(a, b) => {
                a.fmt_prec(f, 3)?;
                write!(f, " & ")?;
                b.fmt_prec(f, 4)?;
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for CompositionExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Poly(usize),
    Or,
    And,
    Xor,
    Not,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            ' ' | '\t' | '\n' | '\r' => {}
            '|' => tokens.push(Token::Or),
            '&' => tokens.push(Token::And),
            '^' => tokens.push(Token::Xor),
            '!' => tokens.push(Token::Not),
            '(' => tokens.push(Token::LParen),
            ')' => tokens.push(Token::RParen),
            'P' | 'p' => {
                let mut digits = String::new();
                while let Some(&(_, d)) = chars.peek() {
                    if d.is_ascii_digit() {
                        digits.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                let idx: usize = digits
                    .parse()
                    .map_err(|_| Error::Composition(format!("bad polygon reference at byte {i}")))?;
                if idx == 0 {
                    return Err(Error::Composition("polygon indices are 1-based".into()));
                }
                tokens.push(Token::Poly(idx - 1));
            }
            other => {
                return Err(Error::Composition(format!(
                    "unexpected character `{other}` at byte {i}"
                )))
            }
        }
    }
    Ok(tokens)
}

struct ExprParser {
    tokens: Vec<Token>,
    pos: usize,
}

impl ExprParser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn parse_or(&mut self) -> Result<CompositionExpr> {
        let mut lhs = self.parse_xor()?;
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            let rhs = self.parse_xor()?;
            lhs = CompositionExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_xor(&mut self) -> Result<CompositionExpr> {
        let mut lhs = self.parse_and()?;
        while self.peek() == Some(&Token::Xor) {
            self.pos += 1;
            let rhs = self.parse_and()?;
            lhs = CompositionExpr::Xor(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<CompositionExpr> {
        let mut lhs = self.parse_unary()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            let rhs = self.parse_unary()?;
            lhs = CompositionExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<CompositionExpr> {
        match self.peek() {
            Some(Token::Not) => {
                self.pos += 1;
                Ok(CompositionExpr::Not(Box::new(self.parse_unary()?)))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.parse_or()?;
                if self.peek() != Some(&Token::RParen) {
                    return Err(Error::Composition("missing closing parenthesis".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Token::Poly(i)) => {
                let i = *i;
                self.pos += 1;
                Ok(CompositionExpr::Poly(i))
            }
            other => Err(Error::Composition(format!(
                "expected operand, found {other:?}"
            ))),
        }
    }
}

/// A named planar target: polygons plus a composition expression.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel {
    pub name: String,
    pub polygons: Vec<Polygon>,
    pub composition: CompositionExpr,
}

impl TargetModel {
    pub fn polygon_count(&self) -> usize {
        self.polygons.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.polygons.iter().map(Polygon::len).sum()
    }
}

/// How serious a validation finding is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Failure,
    Warning,
}

#[derive(Debug, Clone)]
pub struct ValidationIssue {
    pub severity: Severity,
    /// 0-based polygon index, when the issue is tied to one polygon.
    pub polygon: Option<usize>,
    pub message: String,
}

/// Outcome of [`validate_target`]; an empty failure list means the model
/// satisfies all geometric and reference invariants.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn failures(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues
            .iter()
            .filter(|i| i.severity == Severity::Failure)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &ValidationIssue> {
        self.issues
            .iter()
            .filter(|i| i.severity == Severity::Warning)
    }

    pub fn is_valid(&self) -> bool {
        self.failures().next().is_none()
    }

    fn failure(&mut self, polygon: Option<usize>, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            severity: Severity::Failure,
            polygon,
            message: message.into(),
        });
    }

    fn warning(&mut self, polygon: Option<usize>, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            severity: Severity::Warning,
            polygon,
            message: message.into(),
        });
    }
}

/// Checks winding, strict convexity, finiteness, repeated vertices, and
/// composition references. Failures carry the offending polygon index.
pub fn validate_target(target: &TargetModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    if target.polygons.is_empty() {
        report.failure(None, "target has no polygons");
        return report;
    }
    for (i, poly) in target.polygons.iter().enumerate() {
        let verts = poly.vertices();
        if verts.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            report.failure(Some(i), "non-finite vertex coordinate");
            continue;
        }
        for (a, va) in verts.iter().enumerate() {
            for vb in verts.iter().skip(a + 1) {
                if va == vb {
                    report.failure(Some(i), "repeated vertex");
                }
            }
        }
        match poly.winding() {
            Winding::Ccw => {}
            Winding::Cw => report.failure(Some(i), "clockwise winding"),
            Winding::Degenerate => report.failure(Some(i), "degenerate (zero signed area)"),
        }
        if poly.winding() != Winding::Degenerate && !poly.is_strictly_convex() {
            report.failure(Some(i), "not strictly convex");
        }
    }
    let mut refs = Vec::new();
    target.composition.referenced(&mut refs);
    for &r in &refs {
        if r >= target.polygons.len() {
            report.failure(
                None,
                format!(
                    "composition references P{} but only {} polygons exist",
                    r + 1,
                    target.polygons.len()
                ),
            );
        }
    }
    for i in 0..target.polygons.len() {
        if !refs.contains(&i) {
            report.warning(Some(i), format!("polygon P{} is never composed", i + 1));
        }
    }
    report
}

fn line_of(text: &str, byte: usize) -> usize {
    text.as_bytes()[..byte.min(text.len())]
        .iter()
        .filter(|&&b| b == b'\n')
        .count()
        + 1
}

/// Parses the XML target spec dialect. Structural problems (malformed XML,
/// unknown point ids, out-of-range composition references, an empty polygon
/// list) are hard errors; geometric invariants are left to
/// [`validate_target`].
pub fn parse_target_spec(text: &str) -> Result<TargetModel> {
    use quick_xml::events::Event;
    use quick_xml::Reader;

    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);

    let mut name = String::new();
    let mut points: HashMap<String, Vertex2> = HashMap::new();
    let mut polygons: Vec<Polygon> = Vec::new();
    let mut composition_text: Option<String> = None;
    let mut in_composition = false;

    let syntax = |reader: &Reader<&[u8]>, message: String| Error::SpecSyntax {
        line: line_of(text, reader.buffer_position() as usize),
        message,
    };

    loop {
        let pos = reader.buffer_position() as usize;
        match reader.read_event() {
            Err(e) => {
                return Err(Error::SpecSyntax {
                    line: line_of(text, pos),
                    message: e.to_string(),
                })
            }
            Ok(Event::Eof) => break,
            Ok(Event::Start(e)) | Ok(Event::Empty(e)) => {
                let tag = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                let mut attrs: HashMap<String, String> = HashMap::new();
                for attr in e.attributes() {
                    let attr = attr.map_err(|e| syntax(&reader, e.to_string()))?;
                    attrs.insert(
                        String::from_utf8_lossy(attr.key.as_ref()).into_owned(),
                        String::from_utf8_lossy(&attr.value).into_owned(),
                    );
                }
                match tag.as_str() {
                    "target" => {
                        name = attrs.get("name").cloned().unwrap_or_default();
                    }
                    "point" => {
                        let id = attrs
                            .get("id")
                            .ok_or_else(|| syntax(&reader, "point without id".into()))?
                            .clone();
                        let x: f64 = attrs
                            .get("x")
                            .ok_or_else(|| syntax(&reader, format!("point {id} missing x")))?
                            .parse()
                            .map_err(|_| syntax(&reader, format!("point {id}: bad x value")))?;
                        let y: f64 = attrs
                            .get("y")
                            .ok_or_else(|| syntax(&reader, format!("point {id} missing y")))?
                            .parse()
                            .map_err(|_| syntax(&reader, format!("point {id}: bad y value")))?;
                        points.insert(id, Vertex2::new(x, y));
                    }
                    "polygon" => {
                        let list = attrs
                            .get("points")
                            .ok_or_else(|| syntax(&reader, "polygon without points".into()))?;
                        let mut verts = Vec::new();
                        for pid in list.split_whitespace() {
                            let v = points.get(pid).ok_or_else(|| Error::DanglingReference {
                                kind: "point",
                                name: pid.to_string(),
                            })?;
                            verts.push(*v);
                        }
                        if verts.len() < 3 {
                            return Err(syntax(
                                &reader,
                                format!("polygon {} has fewer than 3 points", polygons.len() + 1),
                            ));
                        }
                        polygons.push(Polygon { vertices: verts });
                    }
                    "composition" => in_composition = true,
                    other => {
                        return Err(syntax(&reader, format!("unknown element <{other}>")));
                    }
                }
            }
            Ok(Event::Text(t)) => {
                if in_composition {
                    let raw = t
                        .unescape()
                        .map_err(|e| syntax(&reader, e.to_string()))?
                        .into_owned();
                    composition_text = Some(raw);
                }
            }
            Ok(Event::End(e)) => {
                if e.name().as_ref() == b"composition" {
                    in_composition = false;
                }
            }
            Ok(_) => {}
        }
    }

    if polygons.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let composition = match composition_text {
        Some(t) => CompositionExpr::parse(&t)?,
        None => {
            // Default: union of everything, left-folded.
            let mut expr = CompositionExpr::Poly(0);
            for i in 1..polygons.len() {
                expr = CompositionExpr::Or(Box::new(expr), Box::new(CompositionExpr::Poly(i)));
            }
            expr
        }
    };
    let mut refs = Vec::new();
    composition.referenced(&mut refs);
    if let Some(&bad) = refs.iter().find(|&&r| r >= polygons.len()) {
        return Err(Error::DanglingReference {
            kind: "polygon",
            name: format!("P{}", bad + 1),
        });
    }

    Ok(TargetModel {
        name,
        polygons,
        composition,
    })
}

/// Formats a coordinate with 9 significant digits (canonical precision).
fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let s = format!("{v:.8e}");
    // Values parsed back from this form reproduce the serialized f64 as long
    // as the original had at most 9 significant decimal digits.
    s
}

/// Emits the canonical spec form: deduplicated points in id order, one
/// polygon element per polygon, composition last.
pub fn serialize_target(target: &TargetModel) -> String {
    let mut out = String::new();
    out.push_str(&format!("<target name=\"{}\">\n", target.name));
    let mut ids: Vec<(String, String)> = Vec::new();
    let mut index: HashMap<(u64, u64), usize> = HashMap::new();
    let mut polygon_lines = Vec::new();
    for (pi, poly) in target.polygons.iter().enumerate() {
        let mut names = Vec::new();
        for v in poly.vertices() {
            let key = (v.x.to_bits(), v.y.to_bits());
            let id = match index.get(&key) {
                Some(&i) => i,
                None => {
                    let i = ids.len();
                    index.insert(key, i);
                    ids.push((format_sig9(v.x), format_sig9(v.y)));
                    i
                }
            };
            names.push(format!("p{}", id + 1));
        }
        polygon_lines.push(format!(
            "  <polygon id=\"P{}\" points=\"{}\"/>\n",
            pi + 1,
            names.join(" ")
        ));
    }
    for (i, (x, y)) in ids.iter().enumerate() {
        out.push_str(&format!(
            "  <point id=\"p{}\" x=\"{}\" y=\"{}\"/>\n",
            i + 1,
            x,
            y
        ));
    }
    for line in polygon_lines {
        out.push_str(&line);
    }
    out.push_str(&format!(
        "  <composition>{}</composition>\n",
        target.composition
    ));
    out.push_str("</target>\n");
    out
}

/// Parses, normalizes, and validates a spec. Clockwise polygons are
/// reversed in place and reported as warnings; remaining failures reject
/// the model.
pub fn load_target(text: &str) -> Result<(TargetModel, ValidationReport)> {
    let mut model = parse_target_spec(text)?;
    let mut reversed = Vec::new();
    for (i, poly) in model.polygons.iter_mut().enumerate() {
        if poly.winding() == Winding::Cw {
            poly.reverse();
            reversed.push(i);
        }
    }
    let mut report = validate_target(&model);
    for i in reversed {
        report.warning(Some(i), "input winding was clockwise; reversed to CCW");
    }
    if let Some(first) = report.failures().next() {
        return Err(Error::InvalidPolygon {
            index: first.polygon.map(|p| p + 1).unwrap_or(0),
            reason: first.message.clone(),
        });
    }
    Ok((model, report))
}

/// The planar targets used throughout the experiments.
pub mod targets {
    use super::{load_target, TargetModel};

    pub const STOP_SIGN_XML: &str = include_str!("../assets/stop_sign.xml");
    pub const RUNWAY_XML: &str = include_str!("../assets/runway.xml");
    pub const SLOW_VEHICLE_SIGN_XML: &str = include_str!("../assets/slow_vehicle_sign.xml");

    pub fn stop_sign() -> TargetModel {
        load_target(STOP_SIGN_XML).expect("bundled stop sign spec").0
    }

    pub fn runway() -> TargetModel {
        load_target(RUNWAY_XML).expect("bundled runway spec").0
    }

    pub fn slow_vehicle_sign() -> TargetModel {
        load_target(SLOW_VEHICLE_SIGN_XML)
            .expect("bundled slow-vehicle sign spec")
            .0
    }

    pub fn by_name(name: &str) -> Option<TargetModel> {
        match name {
            "stop-sign" => Some(stop_sign()),
            "runway" => Some(runway()),
            "slow-vehicle-sign" => Some(slow_vehicle_sign()),
            _ => None,
        }
    }

    pub fn xml_by_name(name: &str) -> Option<&'static str> {
        match name {
            "stop-sign" => Some(STOP_SIGN_XML),
            "runway" => Some(RUNWAY_XML),
            "slow-vehicle-sign" => Some(SLOW_VEHICLE_SIGN_XML),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64) -> Vertex2 {
        Vertex2::new(x, y)
    }

    #[test]
    fn winding_of_simple_triangles() {
        assert_eq!(
            winding_orientation(&[v(0., 0.), v(1., 0.), v(0., 1.)]),
            Winding::Ccw
        );
        assert_eq!(
            winding_orientation(&[v(0., 0.), v(0., 1.), v(1., 0.)]),
            Winding::Cw
        );
        assert_eq!(
            winding_orientation(&[v(0., 0.), v(1., 1.), v(2., 2.)]),
            Winding::Degenerate
        );
    }

    #[test]
    fn winding_flips_on_reverse() {
        let polys = [
            vec![v(0., 0.), v(1., 0.), v(0., 1.)],
            vec![v(0., 0.), v(2., 0.), v(2., 1.), v(0., 1.)],
            vec![v(-1., -1.), v(3., 0.), v(2., 4.), v(-2., 1.)],
        ];
        for p in polys {
            let before = winding_orientation(&p);
            let mut rev = p.clone();
            rev.reverse();
            let after = winding_orientation(&rev);
            match before {
                Winding::Ccw => assert_eq!(after, Winding::Cw),
                Winding::Cw => assert_eq!(after, Winding::Ccw),
                Winding::Degenerate => assert_eq!(after, Winding::Degenerate),
            }
        }
    }

    #[test]
    fn convexity_accepts_square_and_triangle() {
        assert!(convexity_check(&[
            v(0., 0.),
            v(1., 0.),
            v(1., 1.),
            v(0., 1.)
        ]));
        assert!(convexity_check(&[v(0., 0.), v(1., 0.), v(0., 1.)]));
    }

    #[test]
    fn convexity_rejects_reflex_chain() {
        // Cross products flip sign at the reflex vertex (1,1).
        assert!(!convexity_check(&[
            v(0., 0.),
            v(2., 0.),
            v(1., 1.),
            v(2., 2.),
            v(0., 2.)
        ]));
    }

    #[test]
    fn parse_minimal_triangle() {
        let text = r#"<target name="tri">
            <point id="a" x="0" y="0"/>
            <point id="b" x="1" y="0"/>
            <point id="c" x="0" y="1"/>
            <polygon points="a b c"/>
            <composition>P1</composition>
        </target>"#;
        let model = parse_target_spec(text).unwrap();
        assert_eq!(model.polygon_count(), 1);
        assert_eq!(model.composition, CompositionExpr::Poly(0));
    }

    #[test]
    fn parse_rejects_dangling_polygon_reference() {
        let text = r#"<target name="bad">
            <point id="a" x="0" y="0"/>
            <point id="b" x="1" y="0"/>
            <point id="c" x="0" y="1"/>
            <polygon points="a b c"/>
            <polygon points="b c a"/>
            <polygon points="c a b"/>
            <composition>P1 | P5</composition>
        </target>"#;
        match parse_target_spec(text) {
            Err(Error::DanglingReference { kind, name }) => {
                assert_eq!(kind, "polygon");
                assert_eq!(name, "P5");
            }
            other => panic!("expected dangling reference, got {other:?}"),
        }
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "<target name=\"x\">\n  <point id=\"a\" x=\"0\" y=\"zz\"/>\n</target>";
        match parse_target_spec(text) {
            Err(Error::SpecSyntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn stop_sign_matches_published_complexity() {
        let model = targets::stop_sign();
        assert_eq!(model.polygon_count(), 13);
        assert_eq!(model.vertex_count(), 58);
        assert!(validate_target(&model).is_valid());
    }

    #[test]
    fn runway_and_slow_sign_complexity() {
        let runway = targets::runway();
        assert_eq!(runway.polygon_count(), 16);
        assert_eq!(runway.vertex_count(), 64);
        let slow = targets::slow_vehicle_sign();
        assert_eq!(slow.polygon_count(), 3);
        assert_eq!(slow.vertex_count(), 12);
    }

    #[test]
    fn validate_flags_cw_and_unreferenced() {
        let model = TargetModel {
            name: "t".into(),
            polygons: vec![
                Polygon::new(vec![v(0., 0.), v(0., 1.), v(1., 0.)]).unwrap(), // CW
                Polygon::new(vec![v(0., 0.), v(1., 0.), v(0., 1.)]).unwrap(),
            ],
            composition: CompositionExpr::Poly(1),
        };
        let report = validate_target(&model);
        let failures: Vec<_> = report.failures().collect();
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].polygon, Some(0));
        assert!(report.warnings().any(|w| w.polygon == Some(0)));
    }

    #[test]
    fn load_auto_reverses_cw_with_warning() {
        let text = r#"<target name="t">
            <point id="a" x="0" y="0"/>
            <point id="b" x="1" y="0"/>
            <point id="c" x="0" y="1"/>
            <polygon points="a c b"/>
            <composition>P1</composition>
        </target>"#;
        let (model, report) = load_target(text).unwrap();
        assert_eq!(model.polygons[0].winding(), Winding::Ccw);
        assert_eq!(report.warnings().count(), 1);
    }

    #[test]
    fn serialize_then_parse_round_trips() {
        for name in ["stop-sign", "runway", "slow-vehicle-sign"] {
            let first = targets::by_name(name).unwrap();
            let text = serialize_target(&first);
            let second = parse_target_spec(&text).unwrap();
            assert_eq!(first, second, "round trip failed for {name}");
            let third = parse_target_spec(&serialize_target(&second)).unwrap();
            assert_eq!(second, third);
        }
    }

    #[test]
    fn composition_parser_precedence_and_display() {
        let e = CompositionExpr::parse("P1 | P2 & P3 ^ !P4").unwrap();
        // `&` binds tighter than `^`, which binds tighter than `|`.
        assert_eq!(e.to_string(), "P1 | P2 & P3 ^ !P4");
        let e2 = CompositionExpr::parse(&e.to_string()).unwrap();
        assert_eq!(e, e2);
        let grouped = CompositionExpr::parse("(P1 | P2) & P3").unwrap();
        assert_eq!(grouped.to_string(), "(P1 | P2) & P3");
    }
}
