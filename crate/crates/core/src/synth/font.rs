//! Embedded 8x8 bitmap font.

use font8x8::legacy::BASIC_LEGACY;

pub const CELL: usize = 8;

/// One glyph bitmap plus its inked extent.
#[derive(Debug, Clone, Copy)]
pub struct Glyph {
    rows: [u8; CELL],
    /// Inclusive inked column and row ranges.
    pub cols: (usize, usize),
    pub rows_range: (usize, usize),
}

impl Glyph {
    pub fn ink(&self, row: usize, col: usize) -> bool {
        row < CELL && col < CELL && self.rows[row] & (1 << col) != 0
    }

    pub fn ink_width(&self) -> usize {
        self.cols.1 - self.cols.0 + 1
    }
}

/// Glyph for a printable ASCII character; `None` for characters without
/// ink (spaces, control and non-ASCII characters).
pub fn glyph(ch: char) -> Option<Glyph> {
    if !ch.is_ascii() || ch.is_ascii_control() {
        return None;
    }
    let rows = BASIC_LEGACY[ch as usize];
    let mut cols: Option<(usize, usize)> = None;
    let mut rr: Option<(usize, usize)> = None;
    for (r, bits) in rows.iter().enumerate() {
        if *bits == 0 {
            continue;
        }
        rr = Some(rr.map_or((r, r), |(a, _)| (a, r)));
        for c in 0..CELL {
            if bits & (1 << c) != 0 {
                cols = Some(cols.map_or((c, c), |(a, b)| (a.min(c), b.max(c))));
            }
        }
    }
    Some(Glyph {
        rows,
        cols: cols?,
        rows_range: rr?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_class_character_has_ink() {
        for ch in ('0'..='9').chain('a'..='z').chain('A'..='Z') {
            let g = glyph(ch).unwrap_or_else(|| panic!("no glyph for {ch}"));
            assert!(g.ink_width() >= 2, "{ch}");
        }
        assert!(glyph(' ').is_none());
        assert!(glyph('é').is_none());
        assert!(glyph('%').is_some());
    }
}
