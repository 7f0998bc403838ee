//! Lossless PNG codec for 8-bit truecolor, non-interlaced images.
//!
//! The encoder emits stored (uncompressed) deflate blocks, which is
//! legal PNG; losslessness, not compression ratio, is the requirement
//! here. The decoder implements full inflate — stored, fixed-Huffman
//! and dynamic-Huffman blocks — plus all five scanline filters, so
//! files produced by third-party encoders load as long as they stay in
//! the 8-bit truecolor, non-interlaced subset.

use std::sync::OnceLock;

use crate::data::QuantizedImage;
use crate::error::{Error, Result};

/// Fixed 8-byte prefix of every PNG file.
pub const PNG_SIGNATURE: [u8; 8] = [0x89, 0x50, 0x4E, 0x47, 0x0D, 0x0A, 0x1A, 0x0A];

const COLOR_TYPE_RGB: u8 = 2;
const BYTES_PER_PIXEL: usize = 3;

fn crc_table() -> &'static [u32; 256] {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (n, entry) in table.iter_mut().enumerate() {
            let mut c = n as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *entry = c;
        }
        table
    })
}

fn crc32(data: &[u8]) -> u32 {
    let table = crc_table();
    let mut c = 0xFFFF_FFFFu32;
    for &b in data {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

fn adler32(data: &[u8]) -> u32 {
    const MOD: u32 = 65521;
    let (mut a, mut b) = (1u32, 0u32);
    for chunk in data.chunks(5552) {
        for &byte in chunk {
            a += byte as u32;
            b += a;
        }
        a %= MOD;
        b %= MOD;
    }
    (b << 16) | a
}

fn push_chunk(out: &mut Vec<u8>, kind: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    let start = out.len();
    out.extend_from_slice(kind);
    out.extend_from_slice(payload);
    let crc = crc32(&out[start..]);
    out.extend_from_slice(&crc.to_be_bytes());
}

/// Encodes an 8-bit RGB image as a standards-valid PNG byte stream
/// (truecolor, no interlace, stored deflate blocks).
pub fn png_encode(img: &QuantizedImage) -> Result<Vec<u8>> {
    if img.channels() != BYTES_PER_PIXEL {
        return Err(Error::PngUnsupported(format!(
            "encoder handles 3-channel RGB, got {} channels",
            img.channels()
        )));
    }
    let (w, h) = (img.width(), img.height());

    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&(w as u32).to_be_bytes());
    ihdr.extend_from_slice(&(h as u32).to_be_bytes());
    ihdr.extend_from_slice(&[8, COLOR_TYPE_RGB, 0, 0, 0]);

    // Raw scanline stream: filter byte 0 (None) before each row.
    let row_bytes = w * BYTES_PER_PIXEL;
    let mut raw = Vec::with_capacity(h * (row_bytes + 1));
    for row in img.samples().chunks(row_bytes) {
        raw.push(0);
        raw.extend_from_slice(row);
    }

    // zlib wrapper around stored deflate blocks.
    let mut idat = vec![0x78, 0x01];
    let mut blocks = raw.chunks(0xFFFF).peekable();
    if raw.is_empty() {
        idat.extend_from_slice(&[0x01, 0x00, 0x00, 0xFF, 0xFF]);
    }
    while let Some(block) = blocks.next() {
        let bfinal = if blocks.peek().is_none() { 1 } else { 0 };
        idat.push(bfinal);
        let len = block.len() as u16;
        idat.extend_from_slice(&len.to_le_bytes());
        idat.extend_from_slice(&(!len).to_le_bytes());
        idat.extend_from_slice(block);
    }
    idat.extend_from_slice(&adler32(&raw).to_be_bytes());

    let mut out = Vec::new();
    out.extend_from_slice(&PNG_SIGNATURE);
    push_chunk(&mut out, b"IHDR", &ihdr);
    push_chunk(&mut out, b"IDAT", &idat);
    push_chunk(&mut out, b"IEND", &[]);
    Ok(out)
}

/// Decodes a PNG of the supported subset back to exact 8-bit samples.
/// Unsupported color types or bit depths are reported, never silently
/// converted.
pub fn png_decode(bytes: &[u8]) -> Result<QuantizedImage> {
    if bytes.len() < 8 || bytes[..8] != PNG_SIGNATURE {
        return Err(Error::Png("missing PNG signature".to_string()));
    }

    let mut pos = 8;
    let mut header: Option<(usize, usize)> = None;
    let mut idat = Vec::new();
    let mut saw_end = false;

    while pos < bytes.len() {
        if pos + 8 > bytes.len() {
            return Err(Error::Png("truncated chunk header".to_string()));
        }
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let kind: [u8; 4] = bytes[pos + 4..pos + 8].try_into().unwrap();
        let data_start = pos + 8;
        let data_end = data_start + len;
        if data_end + 4 > bytes.len() {
            return Err(Error::Png("truncated chunk payload".to_string()));
        }
        let payload = &bytes[data_start..data_end];
        let stored_crc = u32::from_be_bytes(bytes[data_end..data_end + 4].try_into().unwrap());
        if crc32(&bytes[pos + 4..data_end]) != stored_crc {
            return Err(Error::Png(format!(
                "CRC mismatch in {} chunk",
                String::from_utf8_lossy(&kind)
            )));
        }

        match &kind {
            b"IHDR" => {
                if len != 13 {
                    return Err(Error::Png("IHDR must be 13 bytes".to_string()));
                }
                let w = u32::from_be_bytes(payload[0..4].try_into().unwrap()) as usize;
                let h = u32::from_be_bytes(payload[4..8].try_into().unwrap()) as usize;
                let (depth, color, comp, filter, interlace) =
                    (payload[8], payload[9], payload[10], payload[11], payload[12]);
                if depth != 8 || color != COLOR_TYPE_RGB {
                    return Err(Error::PngUnsupported(format!(
                        "bit depth {depth}, color type {color} (only 8-bit truecolor)"
                    )));
                }
                if comp != 0 || filter != 0 {
                    return Err(Error::PngUnsupported(
                        "nonstandard compression/filter method".to_string(),
                    ));
                }
                if interlace != 0 {
                    return Err(Error::PngUnsupported("interlaced PNG".to_string()));
                }
                if w == 0 || h == 0 {
                    return Err(Error::Png("zero-sized image".to_string()));
                }
                header = Some((w, h));
            }
            b"IDAT" => idat.extend_from_slice(payload),
            b"IEND" => {
                saw_end = true;
                break;
            }
            _ => {} // ancillary chunks are skipped
        }
        pos = data_end + 4;
    }

    let (w, h) = header.ok_or_else(|| Error::Png("missing IHDR".to_string()))?;
    if !saw_end {
        return Err(Error::Png("missing IEND".to_string()));
    }
    if idat.is_empty() {
        return Err(Error::Png("missing IDAT".to_string()));
    }

    let raw = zlib_decompress(&idat)?;
    let samples = unfilter(&raw, w, h)?;
    QuantizedImage::new(w, h, BYTES_PER_PIXEL, samples)
}

fn zlib_decompress(data: &[u8]) -> Result<Vec<u8>> {
    if data.len() < 6 {
        return Err(Error::Png("zlib stream too short".to_string()));
    }
    let (cmf, flg) = (data[0], data[1]);
    if cmf & 0x0F != 8 {
        return Err(Error::PngUnsupported(format!(
            "zlib compression method {}",
            cmf & 0x0F
        )));
    }
    if (cmf as u16 * 256 + flg as u16) % 31 != 0 {
        return Err(Error::Png("bad zlib header check".to_string()));
    }
    if flg & 0x20 != 0 {
        return Err(Error::PngUnsupported("zlib preset dictionary".to_string()));
    }
    let out = inflate(&data[2..data.len() - 4])?;
    let stored = u32::from_be_bytes(data[data.len() - 4..].try_into().unwrap());
    if adler32(&out) != stored {
        return Err(Error::Png("adler32 mismatch".to_string()));
    }
    Ok(out)
}

struct BitReader<'a> {
    data: &'a [u8],
    byte: usize,
    bit: u32,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        BitReader { data, byte: 0, bit: 0 }
    }

    fn read_bit(&mut self) -> Result<u32> {
        if self.byte >= self.data.len() {
            return Err(Error::Png("deflate stream exhausted".to_string()));
        }
        let bit = (self.data[self.byte] >> self.bit) as u32 & 1;
        self.bit += 1;
        if self.bit == 8 {
            self.bit = 0;
            self.byte += 1;
        }
        Ok(bit)
    }

    /// Reads `n` bits LSB-first.
    fn read_bits(&mut self, n: u32) -> Result<u32> {
        let mut v = 0;
        for i in 0..n {
            v |= self.read_bit()? << i;
        }
        Ok(v)
    }

    fn align_to_byte(&mut self) {
        if self.bit != 0 {
            self.bit = 0;
            self.byte += 1;
        }
    }

    fn read_aligned(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.byte + n > self.data.len() {
            return Err(Error::Png("deflate stream exhausted".to_string()));
        }
        let slice = &self.data[self.byte..self.byte + n];
        self.byte += n;
        Ok(slice)
    }
}

/// Canonical Huffman decoding table built from code lengths.
struct Huffman {
    /// counts[l] = number of codes of length l.
    counts: [u16; 16],
    /// Symbols sorted by (length, symbol).
    symbols: Vec<u16>,
}

impl Huffman {
    fn from_lengths(lengths: &[u8]) -> Result<Self> {
        let mut counts = [0u16; 16];
        for &l in lengths {
            if l as usize >= 16 {
                return Err(Error::Png("huffman code length > 15".to_string()));
            }
            counts[l as usize] += 1;
        }
        counts[0] = 0;
        let mut symbols = Vec::with_capacity(lengths.len());
        let mut offsets = [0usize; 16];
        for l in 1..16 {
            offsets[l] = offsets[l - 1] + counts[l - 1] as usize;
        }
        let total: usize = counts[1..].iter().map(|&c| c as usize).sum();
        symbols.resize(total, 0);
        for (sym, &l) in lengths.iter().enumerate() {
            if l != 0 {
                symbols[offsets[l as usize]] = sym as u16;
                offsets[l as usize] += 1;
            }
        }
        Ok(Huffman { counts, symbols })
    }

    fn decode(&self, reader: &mut BitReader) -> Result<u16> {
        let mut code: i32 = 0;
        let mut first: i32 = 0;
        let mut index: i32 = 0;
        for length in 1..16 {
            code |= reader.read_bit()? as i32;
            let count = self.counts[length] as i32;
            if code - first < count {
                return Ok(self.symbols[(index + (code - first)) as usize]);
            }
            index += count;
            first = (first + count) << 1;
            code <<= 1;
        }
        Err(Error::Png("invalid huffman code".to_string()))
    }
}

const LENGTH_BASE: [u16; 29] = [
    3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 15, 17, 19, 23, 27, 31, 35, 43, 51, 59, 67, 83, 99, 115, 131,
    163, 195, 227, 258,
];
const LENGTH_EXTRA: [u32; 29] = [
    0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0,
];
const DIST_BASE: [u16; 30] = [
    1, 2, 3, 4, 5, 7, 9, 13, 17, 25, 33, 49, 65, 97, 129, 193, 257, 385, 513, 769, 1025, 1537,
    2049, 3073, 4097, 6145, 8193, 12289, 16385, 24577,
];
const DIST_EXTRA: [u32; 30] = [
    0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13,
    13,
];

fn fixed_tables() -> (Huffman, Huffman) {
    let mut lit_lengths = [0u8; 288];
    for (i, l) in lit_lengths.iter_mut().enumerate() {
        *l = match i {
            0..=143 => 8,
            144..=255 => 9,
            256..=279 => 7,
            _ => 8,
        };
    }
    let dist_lengths = [5u8; 30];
    (
        Huffman::from_lengths(&lit_lengths).expect("fixed table is valid"),
        Huffman::from_lengths(&dist_lengths).expect("fixed table is valid"),
    )
}

fn dynamic_tables(reader: &mut BitReader) -> Result<(Huffman, Huffman)> {
    const ORDER: [usize; 19] = [16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15];
    let hlit = reader.read_bits(5)? as usize + 257;
    let hdist = reader.read_bits(5)? as usize + 1;
    let hclen = reader.read_bits(4)? as usize + 4;
    if hlit > 286 || hdist > 30 {
        return Err(Error::Png("bad dynamic header counts".to_string()));
    }

    let mut cl_lengths = [0u8; 19];
    for &idx in ORDER.iter().take(hclen) {
        cl_lengths[idx] = reader.read_bits(3)? as u8;
    }
    let cl_table = Huffman::from_lengths(&cl_lengths)?;

    let mut lengths = vec![0u8; hlit + hdist];
    let mut i = 0;
    while i < lengths.len() {
        let sym = cl_table.decode(reader)?;
        match sym {
            0..=15 => {
                lengths[i] = sym as u8;
                i += 1;
            }
            16 => {
                if i == 0 {
                    return Err(Error::Png("repeat with no previous length".to_string()));
                }
                let prev = lengths[i - 1];
                let count = reader.read_bits(2)? as usize + 3;
                for _ in 0..count {
                    if i >= lengths.len() {
                        return Err(Error::Png("length repeat overflow".to_string()));
                    }
                    lengths[i] = prev;
                    i += 1;
                }
            }
            17 | 18 => {
                let count = if sym == 17 {
                    reader.read_bits(3)? as usize + 3
                } else {
                    reader.read_bits(7)? as usize + 11
                };
                if i + count > lengths.len() {
                    return Err(Error::Png("length repeat overflow".to_string()));
                }
                i += count;
            }
            _ => return Err(Error::Png("bad code-length symbol".to_string())),
        }
    }

    Ok((
        Huffman::from_lengths(&lengths[..hlit])?,
        Huffman::from_lengths(&lengths[hlit..])?,
    ))
}

fn inflate(data: &[u8]) -> Result<Vec<u8>> {
    let mut reader = BitReader::new(data);
    let mut out = Vec::new();
    loop {
        let bfinal = reader.read_bit()?;
        let btype = reader.read_bits(2)?;
        match btype {
            0 => {
                reader.align_to_byte();
                let header = reader.read_aligned(4)?;
                let len = u16::from_le_bytes([header[0], header[1]]);
                let nlen = u16::from_le_bytes([header[2], header[3]]);
                if len != !nlen {
                    return Err(Error::Png("stored block LEN/NLEN mismatch".to_string()));
                }
                out.extend_from_slice(reader.read_aligned(len as usize)?);
            }
            1 | 2 => {
                let (lit, dist) = if btype == 1 {
                    fixed_tables()
                } else {
                    dynamic_tables(&mut reader)?
                };
                loop {
                    let sym = lit.decode(&mut reader)?;
                    match sym {
                        0..=255 => out.push(sym as u8),
                        256 => break,
                        257..=285 => {
                            let idx = sym as usize - 257;
                            let length =
                                LENGTH_BASE[idx] as usize + reader.read_bits(LENGTH_EXTRA[idx])? as usize;
                            let dsym = dist.decode(&mut reader)? as usize;
                            if dsym >= 30 {
                                return Err(Error::Png("bad distance symbol".to_string()));
                            }
                            let distance =
                                DIST_BASE[dsym] as usize + reader.read_bits(DIST_EXTRA[dsym])? as usize;
                            if distance > out.len() {
                                return Err(Error::Png("distance beyond output".to_string()));
                            }
                            let start = out.len() - distance;
                            for k in 0..length {
                                let b = out[start + k];
                                out.push(b);
                            }
                        }
                        _ => return Err(Error::Png("bad literal/length symbol".to_string())),
                    }
                }
            }
            _ => return Err(Error::Png("reserved deflate block type".to_string())),
        }
        if bfinal == 1 {
            break;
        }
    }
    Ok(out)
}

fn paeth(a: i32, b: i32, c: i32) -> u8 {
    let p = a + b - c;
    let (pa, pb, pc) = ((p - a).abs(), (p - b).abs(), (p - c).abs());
    if pa <= pb && pa <= pc {
        a as u8
    } else if pb <= pc {
        b as u8
    } else {
        c as u8
    }
}

/// Reverses per-row scanline filtering (types 0-4).
fn unfilter(raw: &[u8], width: usize, height: usize) -> Result<Vec<u8>> {
    let row_bytes = width * BYTES_PER_PIXEL;
    if raw.len() != height * (row_bytes + 1) {
        return Err(Error::Png(format!(
            "decompressed size {} does not match {}x{} RGB",
            raw.len(),
            width,
            height
        )));
    }
    let mut out = vec![0u8; height * row_bytes];
    for y in 0..height {
        let filter = raw[y * (row_bytes + 1)];
        let src = &raw[y * (row_bytes + 1) + 1..(y + 1) * (row_bytes + 1)];
        for x in 0..row_bytes {
            let left = if x >= BYTES_PER_PIXEL {
                out[y * row_bytes + x - BYTES_PER_PIXEL] as i32
            } else {
                0
            };
            let up = if y > 0 { out[(y - 1) * row_bytes + x] as i32 } else { 0 };
            let up_left = if y > 0 && x >= BYTES_PER_PIXEL {
                out[(y - 1) * row_bytes + x - BYTES_PER_PIXEL] as i32
            } else {
                0
            };
            let recon = match filter {
                0 => src[x],
                1 => src[x].wrapping_add(left as u8),
                2 => src[x].wrapping_add(up as u8),
                3 => src[x].wrapping_add(((left + up) / 2) as u8),
                4 => src[x].wrapping_add(paeth(left, up, up_left)),
                f => return Err(Error::Png(format!("unknown filter type {f}"))),
            };
            out[y * row_bytes + x] = recon;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> QuantizedImage {
        let samples = (0..w * h * 3).map(|_| rng.gen()).collect();
        QuantizedImage::new(w, h, 3, samples).unwrap()
    }

    #[test]
    fn output_starts_with_signature() {
        let img = QuantizedImage::new(1, 1, 3, vec![1, 2, 3]).unwrap();
        let bytes = png_encode(&img).unwrap();
        assert_eq!(&bytes[..8], &PNG_SIGNATURE);
    }

    #[test]
    fn roundtrip_100_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let w = rng.gen_range(1..40);
            let h = rng.gen_range(1..40);
            let img = random_image(&mut rng, w, h);
            let decoded = png_decode(&png_encode(&img).unwrap()).unwrap();
            assert_eq!(decoded, img);
        }
    }

    #[test]
    fn roundtrip_large_enough_for_multiple_stored_blocks() {
        // 200x120 RGB rows exceed the 65535-byte stored block limit.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 200, 120);
        let decoded = png_decode(&png_encode(&img).unwrap()).unwrap();
        assert_eq!(decoded, img);
    }

    #[test]
    fn truncated_stream_errors() {
        let img = QuantizedImage::new(4, 4, 3, vec![7; 48]).unwrap();
        let bytes = png_encode(&img).unwrap();
        for cut in [3, 10, 30, bytes.len() - 5] {
            assert!(png_decode(&bytes[..cut]).is_err(), "cut at {cut} decoded");
        }
    }

    #[test]
    fn corrupted_crc_detected() {
        let img = QuantizedImage::new(4, 4, 3, vec![7; 48]).unwrap();
        let mut bytes = png_encode(&img).unwrap();
        let n = bytes.len();
        bytes[n - 20] ^= 0xFF; // inside IDAT payload
        assert!(png_decode(&bytes).is_err());
    }

    #[test]
    fn unsupported_color_type_reported() {
        // Rewrite the IHDR color type to grayscale (0) and fix the CRC.
        let img = QuantizedImage::new(2, 2, 3, vec![0; 12]).unwrap();
        let mut bytes = png_encode(&img).unwrap();
        bytes[8 + 8 + 9] = 0; // IHDR payload byte 9: color type
        let crc = crc32(&bytes[12..12 + 4 + 13]);
        bytes[12 + 4 + 13..12 + 4 + 13 + 4].copy_from_slice(&crc.to_be_bytes());
        match png_decode(&bytes) {
            Err(Error::PngUnsupported(_)) => {}
            other => panic!("expected unsupported error, got {other:?}"),
        }
    }

    #[test]
    fn crc32_known_value() {
        // CRC-32 of "123456789" is the standard check value.
        assert_eq!(crc32(b"123456789"), 0xCBF43926);
    }

    #[test]
    fn adler32_known_value() {
        // Adler-32 of "Wikipedia" per the published example.
        assert_eq!(adler32(b"Wikipedia"), 0x11E60398);
    }
}
