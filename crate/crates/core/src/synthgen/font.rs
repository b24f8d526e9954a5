//! Embedded 5x7 bitmap font and the recognition charset.
//!
//! The charset is 52 glyphs: ten digits, the uppercase Latin alphabet, and
//! sixteen accented series letters. Class indices for the recognizer are
//! charset position + 1; index 0 is reserved for the CTC blank.

/// All renderable characters, in class order.
pub const CHARSET: &str = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZĂÂÀÁÃĐÊÈÉÌÍÔÒÓƠƯ";

/// Number of distinct characters (excludes the blank).
pub const CHARSET_LEN: usize = 52;

/// Glyph cell geometry in font units.
pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

pub fn charset_chars() -> Vec<char> {
    CHARSET.chars().collect()
}

/// Class index of `c` (1-based; 0 is the blank). None for unknown chars.
pub fn char_to_class(c: char) -> Option<usize> {
    CHARSET.chars().position(|x| x == c).map(|p| p + 1)
}

/// Character for a class index produced by the recognizer.
pub fn class_to_char(class: usize) -> Option<char> {
    if class == 0 {
        return None;
    }
    CHARSET.chars().nth(class - 1)
}

/// 7 rows of 5-bit bitmaps, bit 4 = leftmost column. The accented glyphs
/// put the mark in the top two rows over a condensed letter body.
pub fn glyph(c: char) -> Option<[u8; 7]> {
    let g = match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        'Ă' => [0x11, 0x0E, 0x04, 0x0A, 0x11, 0x1F, 0x11],
        'Â' => [0x04, 0x0A, 0x04, 0x0A, 0x11, 0x1F, 0x11],
        'À' => [0x08, 0x04, 0x04, 0x0A, 0x11, 0x1F, 0x11],
        'Á' => [0x02, 0x04, 0x04, 0x0A, 0x11, 0x1F, 0x11],
        'Ã' => [0x0D, 0x16, 0x04, 0x0A, 0x11, 0x1F, 0x11],
        'Đ' => [0x1C, 0x12, 0x11, 0x1D, 0x11, 0x12, 0x1C],
        'Ê' => [0x04, 0x0A, 0x1F, 0x10, 0x1C, 0x10, 0x1F],
        'È' => [0x08, 0x04, 0x1F, 0x10, 0x1C, 0x10, 0x1F],
        'É' => [0x02, 0x04, 0x1F, 0x10, 0x1C, 0x10, 0x1F],
        'Ì' => [0x08, 0x04, 0x0E, 0x04, 0x04, 0x04, 0x0E],
        'Í' => [0x02, 0x04, 0x0E, 0x04, 0x04, 0x04, 0x0E],
        'Ô' => [0x04, 0x0A, 0x0E, 0x11, 0x11, 0x11, 0x0E],
        'Ò' => [0x08, 0x04, 0x0E, 0x11, 0x11, 0x11, 0x0E],
        'Ó' => [0x02, 0x04, 0x0E, 0x11, 0x11, 0x11, 0x0E],
        'Ơ' => [0x03, 0x01, 0x0E, 0x11, 0x11, 0x11, 0x0E],
        'Ư' => [0x03, 0x01, 0x11, 0x11, 0x11, 0x11, 0x0E],
        _ => return None,
    };
    Some(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn charset_is_52_unique_renderable_chars() {
        let chars = charset_chars();
        assert_eq!(chars.len(), CHARSET_LEN);
        assert_eq!(chars.iter().collect::<HashSet<_>>().len(), CHARSET_LEN);
        for &c in &chars {
            assert!(glyph(c).is_some(), "no bitmap for {c:?}");
        }
        assert!(glyph('?').is_none());
        assert!(glyph('a').is_none());
    }

    #[test]
    fn glyph_bitmaps_are_distinct_and_nonempty() {
        let mut seen = HashSet::new();
        for c in charset_chars() {
            let g = glyph(c).unwrap();
            assert!(g.iter().any(|&row| row != 0), "{c:?} is blank");
            assert!(g.iter().all(|&row| row < 0x20), "{c:?} spills past 5 columns");
            assert!(seen.insert(g), "{c:?} duplicates another bitmap");
        }
    }

    #[test]
    fn class_mapping_roundtrips_with_blank_reserved() {
        assert_eq!(char_to_class('0'), Some(1));
        assert_eq!(char_to_class('Ư'), Some(52));
        assert_eq!(class_to_char(0), None);
        for (i, c) in charset_chars().into_iter().enumerate() {
            assert_eq!(char_to_class(c), Some(i + 1));
            assert_eq!(class_to_char(i + 1), Some(c));
        }
    }
}
