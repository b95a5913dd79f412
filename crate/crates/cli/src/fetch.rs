//! Offline dataset verification.
//!
//! Never downloads anything: it checks that the IDX quartet on disk is
//! structurally sound (magic numbers, dimensions, header counts against
//! byte lengths, label ranges, image/label count agreement) and reports
//! whether each file is byte-identical to the canonical MNIST release.
//! Structural problems fail the check; a non-canonical but well-formed
//! file — a subset, say — only earns a note, so reduced fixtures remain
//! usable.

use std::fs::{self, File};
use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use bladefl_core::data::idx::{read_labels, IMAGE_DIM, IMAGE_MAGIC, IMAGE_SIDE};
use bladefl_core::error::{Error, Result};

/// What the canonical (decompressed) MNIST release looks like.
pub struct ExpectedFile {
    pub name: &'static str,
    pub images: bool,
    pub bytes: u64,
    pub sha256: &'static str,
}

pub const MNIST_FILES: [ExpectedFile; 4] = [
    ExpectedFile {
        name: "train-images-idx3-ubyte",
        images: true,
        bytes: 47_040_016,
        sha256: "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    },
    ExpectedFile {
        name: "train-labels-idx1-ubyte",
        images: false,
        bytes: 60_008,
        sha256: "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    },
    ExpectedFile {
        name: "t10k-images-idx3-ubyte",
        images: true,
        bytes: 7_840_016,
        sha256: "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    },
    ExpectedFile {
        name: "t10k-labels-idx1-ubyte",
        images: false,
        bytes: 10_008,
        sha256: "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    },
];

#[derive(Clone, Debug)]
pub struct FileStatus {
    /// Images or labels in the file, per its own header.
    pub count: u32,
    pub bytes: u64,
    pub sha256: String,
    /// Byte-identical to the canonical release.
    pub canonical: bool,
}

fn fault(path: &Path, reason: String) -> Error {
    Error::IdxFormat { path: path.display().to_string(), reason }
}

/// Validate an image file's header against its byte length without loading
/// the pixels (the training split decodes to hundreds of megabytes).
fn check_idx_images(path: &Path) -> Result<(u32, u64)> {
    let len = fs::metadata(path)?.len();
    if len < 16 {
        return Err(fault(path, format!("truncated header: {len} bytes, need 16")));
    }
    let mut head = [0u8; 16];
    File::open(path)?.read_exact(&mut head)?;
    let word = |i: usize| u32::from_be_bytes(head[i..i + 4].try_into().expect("4 bytes"));
    let magic = word(0);
    if magic != IMAGE_MAGIC {
        return Err(fault(
            path,
            format!("bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"),
        ));
    }
    let count = word(4);
    let (rows, cols) = (word(8), word(12));
    if rows as usize != IMAGE_SIDE || cols as usize != IMAGE_SIDE {
        return Err(fault(path, format!("unsupported dims {rows}x{cols}, expected 28x28")));
    }
    let expected = 16 + u64::from(count) * IMAGE_DIM as u64;
    if len != expected {
        return Err(fault(
            path,
            format!("truncated or padded: {len} bytes, expected {expected} for {count} images"),
        ));
    }
    Ok((count, len))
}

/// Labels are tiny, so the real reader does the work (magic, length,
/// 0..=9 range).
fn check_idx_labels(path: &Path) -> Result<(u32, u64)> {
    let labels = read_labels(path)?;
    Ok((labels.len() as u32, fs::metadata(path)?.len()))
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(bladefl_core::util::to_hex(&hasher.finalize()))
}

pub fn check_file(dir: &Path, exp: &ExpectedFile) -> Result<FileStatus> {
    let path = dir.join(exp.name);
    if !path.exists() {
        return Err(fault(&path, "missing".into()));
    }
    let (count, bytes) = if exp.images {
        check_idx_images(&path)?
    } else {
        check_idx_labels(&path)?
    };
    let sha256 = sha256_hex(&path)?;
    Ok(FileStatus {
        count,
        bytes,
        canonical: bytes == exp.bytes && sha256 == exp.sha256,
        sha256,
    })
}

/// Check the whole quartet. Per-file outcomes come back in release order;
/// the second list holds cross-file complaints (image/label count
/// disagreement within a split).
pub fn verify_mnist(dir: &Path) -> (Vec<(&'static str, Result<FileStatus>)>, Vec<String>) {
    let results: Vec<_> = MNIST_FILES
        .iter()
        .map(|e| (e.name, check_file(dir, e)))
        .collect();
    let mut cross = Vec::new();
    for (imgs, lbls, split) in [(0usize, 1usize, "training"), (2, 3, "test")] {
        if let (Ok(a), Ok(b)) = (&results[imgs].1, &results[lbls].1) {
            if a.count != b.count {
                cross.push(format!(
                    "{split} split: {} images but {} labels",
                    a.count, b.count
                ));
            }
        }
    }
    (results, cross)
}
