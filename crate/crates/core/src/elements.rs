//! Element symbols, covalent radii and the metal set, loaded from `data/elements.txt`.

use std::sync::OnceLock;

const TABLE: &str = include_str!("../data/elements.txt");

/// Largest atomic number in the shipped table.
pub const MAX_Z: u8 = 96;

struct Entry {
    symbol: &'static str,
    radius: f64,
}

fn table() -> &'static [Entry] {
    static CELL: OnceLock<Vec<Entry>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut out = Vec::new();
        for line in TABLE.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let z: usize = it.next().unwrap().parse().expect("atomic number");
            let symbol = it.next().expect("symbol");
            let radius: f64 = it.next().unwrap().parse().expect("radius");
            assert_eq!(z, out.len() + 1, "element table must be contiguous");
            out.push(Entry { symbol, radius });
        }
        assert_eq!(out.len(), MAX_Z as usize);
        out
    })
}

pub fn symbol(z: u8) -> Option<&'static str> {
    table().get((z as usize).checked_sub(1)?).map(|e| e.symbol)
}

/// Case-insensitive symbol lookup ("Cu", "CU", "cu").
pub fn atomic_number(symbol: &str) -> Option<u8> {
    table()
        .iter()
        .position(|e| e.symbol.eq_ignore_ascii_case(symbol))
        .map(|i| (i + 1) as u8)
}

pub fn covalent_radius(z: u8) -> Option<f64> {
    table().get((z as usize).checked_sub(1)?).map(|e| e.radius)
}

/// Alkali, alkaline-earth, transition, post-transition metals, lanthanides and actinides.
pub fn is_metal(z: u8) -> bool {
    matches!(z, 3 | 4 | 11 | 12 | 13 | 19..=31 | 37..=50 | 55..=83 | 87..=96)
}
