//! Minimal P1 CIF reader and writer.
//!
//! Supported: `_cell_length_{a,b,c}`, `_cell_angle_{alpha,beta,gamma}` and one
//! atom-site loop carrying an element (`_atom_site_type_symbol`, else the label)
//! and `_atom_site_fract_{x,y,z}`. Symmetry operations other than the identity
//! are rejected; text fields (`;` blocks) are skipped.

use std::fmt::Write as _;

use thiserror::Error;

use crate::crystal::{wrap_unit, CrystalError, CrystalStructure, Lattice};
use crate::elements;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CifErrorKind {
    #[error("missing required tag {0}")]
    MissingTag(&'static str),
    #[error("unknown element symbol {0:?}")]
    UnknownElement(String),
    #[error("row has {found} fields, loop declares {expected}")]
    Arity { expected: usize, found: usize },
    #[error("cannot parse number {0:?}")]
    BadNumber(String),
    #[error("symmetry operation {0:?} is not supported (P1 only)")]
    Symmetry(String),
    #[error("unterminated quoted value or text field")]
    Unterminated,
    #[error("no atom sites")]
    NoAtoms,
    #[error(transparent)]
    Structure(#[from] CrystalError),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {kind}")]
pub struct CifError {
    /// 1-based; 0 when the problem is not tied to a line.
    pub line: usize,
    pub kind: CifErrorKind,
}

fn err(line: usize, kind: CifErrorKind) -> CifError {
    CifError { line, kind }
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<String>, CifError> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '#' {
            break;
        } else if c == '\'' || c == '"' {
            chars.next();
            let mut tok = String::new();
            loop {
                match chars.next() {
                    // a quote closes only when followed by whitespace or end of line
                    Some(q) if q == c && chars.peek().is_none_or(|n| n.is_whitespace()) => break,
                    Some(ch) => tok.push(ch),
                    None => return Err(err(line_no, CifErrorKind::Unterminated)),
                }
            }
            out.push(tok);
        } else {
            let mut tok = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() {
                    break;
                }
                tok.push(ch);
                chars.next();
            }
            out.push(tok);
        }
    }
    Ok(out)
}

/// Numeric value with an optional standard uncertainty suffix, e.g. `4.123(5)`.
fn number(tok: &str, line: usize) -> Result<f64, CifError> {
    let core = tok.split('(').next().unwrap_or(tok);
    core.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| err(line, CifErrorKind::BadNumber(tok.to_string())))
}

/// Leading alphabetic part of a label or typed symbol: "Cu1" -> "Cu", "Zn2+" -> "Zn".
fn element_of(tok: &str, line: usize) -> Result<u8, CifError> {
    let sym: String = tok.chars().take_while(|c| c.is_ascii_alphabetic()).take(2).collect();
    let try_sym = |s: &str| elements::atomic_number(s);
    try_sym(&sym)
        .or_else(|| sym.get(..1).and_then(try_sym))
        .ok_or_else(|| err(line, CifErrorKind::UnknownElement(tok.to_string())))
}

fn is_identity_op(op: &str) -> bool {
    let s: String = op.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_lowercase();
    s == "x,y,z" || s == "+x,+y,+z"
}

struct Loop {
    tags: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

const SYMOP_TAGS: [&str; 4] = [
    "_symmetry_equiv_pos_as_xyz",
    "_space_group_symop_operation_xyz",
    "_symmetry_equiv_pos_site_id",
    "_space_group_symop_id",
];

pub fn parse_cif(text: &str) -> Result<CrystalStructure, CifError> {
    let mut scalars: Vec<(String, usize, String)> = Vec::new();
    let mut loops: Vec<Loop> = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    let mut pending_tag: Option<(String, usize)> = None;
    while i < lines.len() {
        let line_no = i + 1;
        let raw = lines[i];
        if raw.starts_with(';') {
            // text field: skip to the closing semicolon line
            i += 1;
            while i < lines.len() && !lines[i].starts_with(';') {
                i += 1;
            }
            if i == lines.len() {
                return Err(err(line_no, CifErrorKind::Unterminated));
            }
            i += 1;
            pending_tag = None;
            continue;
        }
        let toks = tokenize(raw, line_no)?;
        i += 1;
        if toks.is_empty() {
            continue;
        }
        if let Some((tag, tag_line)) = pending_tag.take() {
            if !toks[0].starts_with('_') && !toks[0].eq_ignore_ascii_case("loop_") {
                scalars.push((tag, tag_line, toks[0].clone()));
                continue;
            }
        }
        let head = toks[0].to_ascii_lowercase();
        if head.starts_with("data_") || head.starts_with("global_") {
            continue;
        }
        if head == "loop_" {
            let mut lp = Loop { tags: Vec::new(), rows: Vec::new() };
            while i < lines.len() {
                let t = tokenize(lines[i], i + 1)?;
                match t.first() {
                    None => i += 1,
                    Some(tag) if tag.starts_with('_') => {
                        lp.tags.push(tag.to_ascii_lowercase());
                        i += 1;
                    }
                    Some(_) => break,
                }
            }
            while i < lines.len() {
                if lines[i].starts_with(';') {
                    break;
                }
                let t = tokenize(lines[i], i + 1)?;
                match t.first() {
                    None => i += 1,
                    Some(tok) if tok.starts_with('_') || tok.eq_ignore_ascii_case("loop_") => break,
                    Some(tok) if tok.to_ascii_lowercase().starts_with("data_") => break,
                    Some(_) => {
                        lp.rows.push((i + 1, t));
                        i += 1;
                    }
                }
            }
            loops.push(lp);
            continue;
        }
        if head.starts_with('_') {
            if toks.len() >= 2 {
                scalars.push((head, line_no, toks[1].clone()));
            } else {
                pending_tag = Some((head, line_no));
            }
        }
    }

    let scalar = |name: &'static str| -> Result<(usize, &str), CifError> {
        scalars
            .iter()
            .find(|(t, _, _)| t == name)
            .map(|(_, l, v)| (*l, v.as_str()))
            .ok_or_else(|| err(0, CifErrorKind::MissingTag(name)))
    };
    for name in ["_symmetry_space_group_name_h-m", "_space_group_name_h-m_alt"] {
        if let Ok((line, v)) = scalar(name) {
            let compact: String = v.chars().filter(|c| !c.is_whitespace()).collect();
            if !compact.eq_ignore_ascii_case("p1") {
                return Err(err(line, CifErrorKind::Symmetry(v.to_string())));
            }
        }
    }
    let mut cell = [0.0; 6];
    for (k, name) in [
        "_cell_length_a",
        "_cell_length_b",
        "_cell_length_c",
        "_cell_angle_alpha",
        "_cell_angle_beta",
        "_cell_angle_gamma",
    ]
    .into_iter()
    .enumerate()
    {
        let (line, v) = scalar(name)?;
        cell[k] = number(v, line)?;
    }

    for lp in &loops {
        let Some(col) = lp.tags.iter().position(|t| SYMOP_TAGS[..2].contains(&t.as_str())) else {
            continue;
        };
        for (line, row) in &lp.rows {
            if row.len() != lp.tags.len() {
                return Err(err(*line, CifErrorKind::Arity { expected: lp.tags.len(), found: row.len() }));
            }
            if !is_identity_op(&row[col]) {
                return Err(err(*line, CifErrorKind::Symmetry(row[col].clone())));
            }
        }
    }

    let site = loops
        .iter()
        .find(|lp| lp.tags.iter().any(|t| t == "_atom_site_fract_x"))
        .ok_or_else(|| err(0, CifErrorKind::MissingTag("_atom_site_fract_x")))?;
    let col = |name: &'static str| site.tags.iter().position(|t| t == name);
    let need = |name: &'static str| col(name).ok_or_else(|| err(0, CifErrorKind::MissingTag(name)));
    let (cx, cy, cz) = (need("_atom_site_fract_x")?, need("_atom_site_fract_y")?, need("_atom_site_fract_z")?);
    let c_elem = col("_atom_site_type_symbol")
        .or_else(|| col("_atom_site_label"))
        .ok_or_else(|| err(0, CifErrorKind::MissingTag("_atom_site_type_symbol")))?;
    let mut types = Vec::new();
    let mut frac = Vec::new();
    for (line, row) in &site.rows {
        if row.len() != site.tags.len() {
            return Err(err(*line, CifErrorKind::Arity { expected: site.tags.len(), found: row.len() }));
        }
        types.push(element_of(&row[c_elem], *line)?);
        frac.push([number(&row[cx], *line)?, number(&row[cy], *line)?, number(&row[cz], *line)?]);
    }
    if types.is_empty() {
        return Err(err(0, CifErrorKind::NoAtoms));
    }
    let lattice = Lattice::from_degrees([cell[0], cell[1], cell[2]], [cell[3], cell[4], cell[5]]);
    CrystalStructure::ingest(types, frac, lattice).map_err(|e| err(0, e.into()))
}

/// Fixed-precision value with the 1.0 that rounding can produce folded back to 0.
fn frac_field(x: f64) -> String {
    let s = format!("{:.9}", wrap_unit(x));
    if s == "1.000000000" {
        "0.000000000".to_string()
    } else {
        s
    }
}

pub fn write_cif(s: &CrystalStructure) -> String {
    write_cif_named(s, "structure")
}

/// Deterministic P1 CIF text with 9-decimal fields.
pub fn write_cif_named(s: &CrystalStructure, name: &str) -> String {
    let l = s.lattice();
    let deg = l.angles_degrees();
    let block: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "data_{block}");
    let _ = writeln!(out, "_symmetry_space_group_name_H-M   'P 1'");
    for (tag, v) in ["a", "b", "c"].iter().zip(l.lengths) {
        let _ = writeln!(out, "_cell_length_{tag}   {v:.9}");
    }
    for (tag, v) in ["alpha", "beta", "gamma"].iter().zip(deg) {
        let _ = writeln!(out, "_cell_angle_{tag}   {v:.9}");
    }
    out.push_str("loop_\n_atom_site_label\n_atom_site_type_symbol\n");
    out.push_str("_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n");
    for (k, (&z, f)) in s.atom_types().iter().zip(s.frac()).enumerate() {
        let sym = elements::symbol(z).unwrap_or("X");
        let _ = writeln!(
            out,
            "{sym}{} {sym} {} {} {}",
            k + 1,
            frac_field(f[0]),
            frac_field(f[1]),
            frac_field(f[2])
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    const ONE_ATOM: &str = "data_test
_cell_length_a 4.0
_cell_length_b 4.0
_cell_length_c 4.0
_cell_angle_alpha 90
_cell_angle_beta 90
_cell_angle_gamma 90
loop_
_atom_site_label
_atom_site_type_symbol
_atom_site_fract_x
_atom_site_fract_y
_atom_site_fract_z
C1 C 0 0 0
";

    #[test]
    fn one_atom_cubic() {
        let s = parse_cif(ONE_ATOM).unwrap();
        assert_eq!(s.atom_types(), &[6]);
        assert_eq!(s.lattice().lengths, [4.0; 3]);
        for a in s.lattice().angles {
            assert!((a - FRAC_PI_2).abs() < 1e-12);
        }
    }

    #[test]
    fn arity_error_reports_line() {
        let bad = ONE_ATOM.replace("C1 C 0 0 0", "C1 C 0 0 0 7");
        let e = parse_cif(&bad).unwrap_err();
        assert_eq!(e.line, 14);
        assert_eq!(e.kind, CifErrorKind::Arity { expected: 5, found: 6 });
        let short = ONE_ATOM.replace("C1 C 0 0 0", "C1 C 0 0");
        assert!(matches!(parse_cif(&short).unwrap_err().kind, CifErrorKind::Arity { .. }));
    }

    #[test]
    fn missing_and_unknown() {
        let no_a = ONE_ATOM.replace("_cell_length_a 4.0\n", "");
        assert_eq!(parse_cif(&no_a).unwrap_err().kind, CifErrorKind::MissingTag("_cell_length_a"));
        let unk = ONE_ATOM.replace("C1 C 0 0 0", "Q1 Qq 0 0 0");
        let e = parse_cif(&unk).unwrap_err();
        assert_eq!(e.line, 14);
        assert!(matches!(e.kind, CifErrorKind::UnknownElement(_)));
    }

    #[test]
    fn uncertainties_labels_and_wrapping() {
        let t = ONE_ATOM
            .replace("_cell_length_a 4.0", "_cell_length_a 4.0(2)")
            .replace("_atom_site_type_symbol\n", "")
            .replace("C1 C 0 0 0", "Cu1 1.25 -0.5 0.5(1)");
        let s = parse_cif(&t).unwrap();
        assert_eq!(s.atom_types(), &[29]);
        let f = s.frac()[0];
        assert!((f[0] - 0.25).abs() < 1e-12 && (f[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn symmetry_rejected() {
        let t = format!("{ONE_ATOM}loop_\n_symmetry_equiv_pos_as_xyz\n'x, y, z'\n'-x, -y, -z'\n");
        let e = parse_cif(&t).unwrap_err();
        assert!(matches!(e.kind, CifErrorKind::Symmetry(_)));
        assert_eq!(e.line, 18);
        let ok = format!("{ONE_ATOM}loop_\n_symmetry_equiv_pos_as_xyz\n'x, y, z'\n");
        assert!(parse_cif(&ok).is_ok());
        let hm = ONE_ATOM.replace("data_test\n", "data_test\n_symmetry_space_group_name_H-M 'F m -3 m'\n");
        assert!(matches!(parse_cif(&hm).unwrap_err().kind, CifErrorKind::Symmetry(_)));
    }

    #[test]
    fn write_is_deterministic_and_round_trips() {
        let s = parse_cif(ONE_ATOM).unwrap();
        let a = write_cif(&s);
        assert_eq!(a, write_cif(&s));
        let back = parse_cif(&a).unwrap();
        assert_eq!(write_cif(&back), a);
    }

    #[test]
    fn near_one_coordinates_fold_to_zero() {
        assert_eq!(frac_field(0.9999999999), "0.000000000");
        assert_eq!(frac_field(0.5), "0.500000000");
    }
}
