//! Frame-of-reference cell block codec used for sealed merged pages:
//! a minimum plus fixed-width deltas, no dictionary. The encoding is a pure
//! function of the cell contents, so recompressing identical input yields
//! bit-identical output.

/// Encoded layout:
///   count: u32          number of slots covered
///   min:   u64          frame base (0 when no cell is present)
///   width: u8           delta width in bytes, one of {0,1,2,4,8}
///   presence bitmap     ceil(count/8) bytes
///   deltas              width bytes per *present* slot, little endian
pub fn encode(cells: &[Option<u64>]) -> Vec<u8> {
    let present: Vec<u64> = cells.iter().filter_map(|c| *c).collect();
    let min = present.iter().copied().min().unwrap_or(0);
    let max_delta = present.iter().map(|v| v - min).max().unwrap_or(0);
    let width: u8 = if max_delta == 0 {
        0
    } else if max_delta <= u8::MAX as u64 {
        1
    } else if max_delta <= u16::MAX as u64 {
        2
    } else if max_delta <= u32::MAX as u64 {
        4
    } else {
        8
    };

    let mut out = Vec::with_capacity(17 + cells.len() / 8 + present.len() * width as usize);
    out.extend_from_slice(&(cells.len() as u32).to_le_bytes());
    out.extend_from_slice(&min.to_le_bytes());
    out.push(width);
    let mut bitmap = vec![0u8; cells.len().div_ceil(8)];
    for (i, c) in cells.iter().enumerate() {
        if c.is_some() {
            bitmap[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bitmap);
    for v in &present {
        let delta = (v - min).to_le_bytes();
        out.extend_from_slice(&delta[..width as usize]);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Option<Vec<Option<u64>>> {
    if bytes.len() < 13 {
        return None;
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().ok()?) as usize;
    let min = u64::from_le_bytes(bytes[4..12].try_into().ok()?);
    let width = bytes[12] as usize;
    if !matches!(width, 0 | 1 | 2 | 4 | 8) {
        return None;
    }
    let bitmap_len = count.div_ceil(8);
    let bitmap = bytes.get(13..13 + bitmap_len)?;
    let mut deltas = &bytes[13 + bitmap_len..];
    let mut cells = Vec::with_capacity(count);
    for i in 0..count {
        if bitmap[i / 8] & (1 << (i % 8)) != 0 {
            if deltas.len() < width {
                return None;
            }
            let mut buf = [0u8; 8];
            buf[..width].copy_from_slice(&deltas[..width]);
            deltas = &deltas[width..];
            cells.push(Some(min + u64::from_le_bytes(buf)));
        } else {
            cells.push(None);
        }
    }
    Some(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_block() {
        let cells: Vec<Option<u64>> = vec![None; 4];
        let enc = encode(&cells);
        assert_eq!(decode(&enc).unwrap(), cells);
    }

    #[test]
    fn constant_block_uses_zero_width() {
        let cells = vec![Some(9000u64); 100];
        let enc = encode(&cells);
        assert_eq!(enc[12], 0);
        assert_eq!(decode(&enc).unwrap(), cells);
    }

    proptest! {
        #[test]
        fn roundtrip(cells in proptest::collection::vec(
            proptest::option::of(any::<u64>()), 0..300)) {
            let enc = encode(&cells);
            prop_assert_eq!(decode(&enc).unwrap(), cells.clone());
            // determinism: identical input, identical bytes
            prop_assert_eq!(encode(&cells), enc);
        }
    }
}
