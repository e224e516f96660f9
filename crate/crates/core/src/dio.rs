//! Aligned buffers and direct (page-cache bypassing) file access.
//!
//! Every on-disk section produced by this crate starts on a 4096-byte
//! boundary and files are padded to a multiple of 4096, so a reader can
//! round any byte range outward to the alignment and issue a single
//! positioned read with `O_DIRECT`. Filesystems that refuse direct mode
//! (tmpfs, some overlay setups) fall back to buffered I/O transparently.

use std::fs::{File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{IoContext, Result};

pub const ALIGN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IoMode {
    /// `O_DIRECT` where the filesystem supports it.
    #[default]
    Direct,
    Buffered,
}

pub const fn align_up(n: u64) -> u64 {
    (n + ALIGN as u64 - 1) & !(ALIGN as u64 - 1)
}

pub const fn align_down(n: u64) -> u64 {
    n & !(ALIGN as u64 - 1)
}

#[derive(Clone, Copy)]
#[repr(C, align(4096))]
struct Page([u8; ALIGN]);

/// A growable byte buffer whose storage starts on a 4096-byte boundary.
#[derive(Clone, Default)]
pub struct AlignedBuf {
    pages: Vec<Page>,
    len: usize,
}

impl AlignedBuf {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeroed(len: usize) -> Self {
        let mut buf = Self::new();
        buf.resize(len);
        buf
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn resize(&mut self, len: usize) {
        let pages = len.div_ceil(ALIGN);
        self.pages.resize(pages, Page([0; ALIGN]));
        if len < self.len {
            // keep the tail zeroed so later padding is clean
            let cap = self.pages.len() * ALIGN;
            let end = self.len.min(cap);
            self.raw_mut()[len..end].fill(0);
        }
        self.len = len;
    }

    pub fn extend_from_slice(&mut self, bytes: &[u8]) {
        let start = self.len;
        self.resize(start + bytes.len());
        self.raw_mut()[start..start + bytes.len()].copy_from_slice(bytes);
    }

    /// Zero-extends to the next multiple of [`ALIGN`].
    pub fn pad_to_alignment(&mut self) {
        let target = align_up(self.len as u64) as usize;
        self.resize(target);
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.raw()[..self.len]
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        let len = self.len;
        &mut self.raw_mut()[..len]
    }

    fn raw(&self) -> &[u8] {
        // SAFETY: `Page` is a plain byte array with no padding; a Vec of
        // pages is one contiguous allocation of `pages.len() * ALIGN` bytes.
        unsafe {
            std::slice::from_raw_parts(self.pages.as_ptr().cast::<u8>(), self.pages.len() * ALIGN)
        }
    }

    fn raw_mut(&mut self) -> &mut [u8] {
        // SAFETY: see `raw`.
        unsafe {
            std::slice::from_raw_parts_mut(
                self.pages.as_mut_ptr().cast::<u8>(),
                self.pages.len() * ALIGN,
            )
        }
    }
}

impl std::ops::Deref for AlignedBuf {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        self.as_slice()
    }
}

impl std::fmt::Debug for AlignedBuf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AlignedBuf").field("len", &self.len).finish()
    }
}

static FALLBACK_WARNED: AtomicBool = AtomicBool::new(false);

fn warn_fallback(path: &Path, err: &io::Error) {
    if !FALLBACK_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!(
            "direct I/O unavailable for {} ({err}); falling back to buffered I/O",
            path.display()
        );
    }
}

#[cfg(target_os = "linux")]
fn direct_flag() -> i32 {
    libc::O_DIRECT
}

#[cfg(not(target_os = "linux"))]
fn direct_flag() -> i32 {
    0
}

fn is_direct_refusal(err: &io::Error) -> bool {
    err.raw_os_error() == Some(libc::EINVAL)
}

/// A file opened for positioned reads, possibly in direct mode.
#[derive(Debug)]
pub struct DioFile {
    file: File,
    path: PathBuf,
    direct: bool,
    len: u64,
}

impl DioFile {
    pub fn open(path: &Path, mode: IoMode) -> Result<Self> {
        let buffered = || File::open(path).at(path);
        let (file, direct) = match mode {
            IoMode::Buffered => (buffered()?, false),
            IoMode::Direct => {
                use std::os::unix::fs::OpenOptionsExt;
                match OpenOptions::new()
                    .read(true)
                    .custom_flags(direct_flag())
                    .open(path)
                {
                    Ok(f) => (f, direct_flag() != 0),
                    Err(e) if is_direct_refusal(&e) => {
                        warn_fallback(path, &e);
                        (buffered()?, false)
                    }
                    Err(e) => return Err(crate::Error::io(path, e)),
                }
            }
        };
        let len = file.metadata().at(path)?.len();
        Ok(Self {
            file,
            path: path.to_path_buf(),
            direct,
            len,
        })
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_direct(&self) -> bool {
        self.direct
    }

    /// Reads the byte range `[offset, offset + len)` with one positioned
    /// read rounded outward to [`ALIGN`]. Returns the aligned buffer, the
    /// offset of the requested range inside it, and the number of bytes
    /// actually fetched from the device.
    pub fn read_range(&mut self, offset: u64, len: u64) -> Result<AlignedRead> {
        if len == 0 {
            return Ok(AlignedRead {
                buf: AlignedBuf::new(),
                skip: 0,
                len: 0,
                fetched: 0,
            });
        }
        let start = align_down(offset);
        let end = align_up(offset + len);
        let mut buf = AlignedBuf::zeroed((end - start) as usize);
        let got = match read_full_at(&self.file, buf.as_mut_slice(), start) {
            Ok(n) => n,
            Err(e) if self.direct && is_direct_refusal(&e) => {
                warn_fallback(&self.path, &e);
                self.file = File::open(&self.path).at(&self.path)?;
                self.direct = false;
                read_full_at(&self.file, buf.as_mut_slice(), start).at(&self.path)?
            }
            Err(e) => return Err(crate::Error::io(&self.path, e)),
        };
        let skip = (offset - start) as usize;
        if got < skip + len as usize {
            return Err(crate::Error::Truncated {
                path: self.path.clone(),
                needed: offset + len,
                actual: start + got as u64,
            });
        }
        Ok(AlignedRead {
            buf,
            skip,
            len: len as usize,
            fetched: got as u64,
        })
    }
}

pub struct AlignedRead {
    buf: AlignedBuf,
    skip: usize,
    len: usize,
    pub fetched: u64,
}

impl AlignedRead {
    pub fn bytes(&self) -> &[u8] {
        &self.buf.as_slice()[self.skip..self.skip + self.len]
    }
}

fn read_full_at(file: &File, buf: &mut [u8], offset: u64) -> io::Result<usize> {
    let mut done = 0;
    while done < buf.len() {
        match file.read_at(&mut buf[done..], offset + done as u64) {
            Ok(0) => break,
            Ok(n) => done += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(done)
}

/// Creates (or truncates) `path` and writes `buf` from offset 0. The
/// buffer length must be a multiple of [`ALIGN`] for direct mode.
pub fn write_file(path: &Path, buf: &AlignedBuf, mode: IoMode) -> Result<u64> {
    debug_assert_eq!(buf.len() % ALIGN, 0, "unpadded direct write");
    let buffered = || {
        OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)
            .at(path)
    };
    let write = |file: &File| file.write_all_at(buf.as_slice(), 0);
    match mode {
        IoMode::Buffered => write(&buffered()?).at(path)?,
        IoMode::Direct => {
            use std::os::unix::fs::OpenOptionsExt;
            let opened = OpenOptions::new()
                .write(true)
                .create(true)
                .truncate(true)
                .custom_flags(direct_flag())
                .open(path);
            match opened {
                Ok(file) => match write(&file) {
                    Ok(()) => {}
                    Err(e) if is_direct_refusal(&e) => {
                        warn_fallback(path, &e);
                        drop(file);
                        write(&buffered()?).at(path)?;
                    }
                    Err(e) => return Err(crate::Error::io(path, e)),
                },
                Err(e) if is_direct_refusal(&e) => {
                    warn_fallback(path, &e);
                    write(&buffered()?).at(path)?;
                }
                Err(e) => return Err(crate::Error::io(path, e)),
            }
        }
    }
    Ok(buf.len() as u64)
}
