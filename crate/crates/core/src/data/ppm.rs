use super::Image;
use crate::error::{Error, Result};
use std::path::Path;

/// Writes `P6\n<w> <h>\n255\n` followed by raw RGB bytes.
pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend_from_slice(&image.data);
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads a binary PPM with maxval 255. Header tokens may be separated by
/// any whitespace and `#` comments.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let bad = |msg: &str| Error::load(path, msg);
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PPM header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PPM header"))?);
    }
    if tokens[0] != "P6" {
        return Err(bad("not a binary PPM (magic P6)"));
    }
    let num = |t: &str| t.parse::<usize>().map_err(|_| bad(&format!("bad PPM header field {t:?}")));
    let (width, height, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if maxval != 255 {
        return Err(bad(&format!("PPM maxval {maxval} unsupported, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let len = 3 * width * height;
    if width == 0 || height == 0 || bytes.len() < pos + len {
        return Err(bad(&format!("PPM raster truncated: {width}x{height} needs {len} bytes")));
    }
    Image::new(width, height, bytes[pos..pos + len].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_exact_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let img = Image::new(2, 1, vec![1, 2, 3, 250, 251, 252]).unwrap();
        write_ppm(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
        assert_eq!(read_ppm(&path).unwrap(), img);
    }

    #[test]
    fn header_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let mut bytes = b"P6 # made by hand\n1\n1 255\n".to_vec();
        bytes.extend([9, 8, 7]);
        std::fs::write(&path, bytes).unwrap();
        assert_eq!(read_ppm(&path).unwrap().data, vec![9, 8, 7]);
    }

    #[test]
    fn malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ppm");
        for bytes in [&b"P5\n1 1\n255\n\x00"[..], b"P6\n2 2\n255\n\x00\x00\x00", b"P6\n1 1\n65535\n\x00\x00\x00", b"P6\n1"] {
            std::fs::write(&path, bytes).unwrap();
            assert!(matches!(read_ppm(&path), Err(Error::Load { .. })), "{bytes:?}");
        }
        assert!(matches!(read_ppm(&dir.path().join("none.ppm")), Err(Error::MissingFile(_))));
    }
}
