//! SDPA sparse format (`.dat-s`).

use std::fmt::Write;

use super::{BlockKind, SdpError, SdpProblem, SparseBlockMatrix};

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes a problem in SDPA sparse format.
///
/// Entries are written by `(matno, blockno, i, j)` with 1-based indices and
/// 17 significant digits; matrix 0 is the objective.
pub fn export_sdpa(p: &SdpProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", p.num_constraints());
    let _ = writeln!(out, "{}", p.blocks().len());
    let sizes: Vec<String> = p
        .blocks()
        .iter()
        .map(|k| match *k {
            BlockKind::Dense(d) => d.to_string(),
            BlockKind::Diagonal(d) => format!("-{d}"),
        })
        .collect();
    let _ = writeln!(out, "{}", sizes.join(" "));
    let b: Vec<String> = p.rhs().iter().map(|&v| fmt_value(v)).collect();
    let _ = writeln!(out, "{}", b.join(" "));
    for (matno, m) in std::iter::once(p.objective()).chain(p.constraints()).enumerate() {
        for e in m.entries() {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                matno,
                e.block + 1,
                e.row + 1,
                e.col + 1,
                fmt_value(e.value)
            );
        }
    }
    out
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        let mut header = true;
        for (no, line) in text.lines().enumerate() {
            let trimmed = line.trim_start();
            if header && (trimmed.starts_with('"') || trimmed.starts_with('*')) {
                continue;
            }
            header = false;
            items.extend(
                line.split(|c: char| c.is_whitespace() || ",(){}".contains(c))
                    .filter(|t| !t.is_empty())
                    .map(|t| (no + 1, t)),
            );
        }
        Self { items, pos: 0 }
    }

    fn last_line(&self) -> usize {
        self.items.last().map_or(1, |t| t.0)
    }

    fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<(usize, T), SdpError> {
        let Some(&(line, tok)) = self.items.get(self.pos) else {
            return Err(SdpError::Parse { line: self.last_line(), msg: format!("missing {what}") });
        };
        self.pos += 1;
        tok.parse::<T>()
            .map(|v| (line, v))
            .map_err(|_| SdpError::Parse { line, msg: format!("invalid {what} '{tok}'") })
    }

    fn done(&self) -> bool {
        self.pos >= self.items.len()
    }
}

/// Parses SDPA sparse text. Errors carry the offending line number.
pub fn import_sdpa(text: &str) -> Result<SdpProblem, SdpError> {
    let mut tk = Tokens::new(text);
    let (_, m) = tk.next::<usize>("constraint count")?;
    let (line, nblocks) = tk.next::<usize>("block count")?;
    if nblocks == 0 {
        return Err(SdpError::Parse { line, msg: "at least one block is required".into() });
    }
    let mut blocks = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        let (line, s) = tk.next::<i64>("block size")?;
        blocks.push(match s {
            0 => return Err(SdpError::Parse { line, msg: "zero block size".into() }),
            s if s > 0 => BlockKind::Dense(s as usize),
            s => BlockKind::Diagonal(s.unsigned_abs() as usize),
        });
    }
    let mut b = Vec::with_capacity(m);
    for _ in 0..m {
        b.push(tk.next::<f64>("right-hand side")?.1);
    }
    let mut mats = vec![SparseBlockMatrix::new(); m + 1];
    while !tk.done() {
        let (line, matno) = tk.next::<usize>("matrix number")?;
        let blk = tk.next::<usize>("block number")?.1;
        let i = tk.next::<usize>("row index")?.1;
        let j = tk.next::<usize>("column index")?.1;
        let v = tk.next::<f64>("entry value")?.1;
        if matno > m {
            return Err(SdpError::Parse { line, msg: format!("matrix number {matno} exceeds {m}") });
        }
        let Some(kind) = blk.checked_sub(1).and_then(|k| blocks.get(k)) else {
            return Err(SdpError::Parse { line, msg: format!("block number {blk} out of range") });
        };
        if i == 0 || j == 0 || i > kind.dim() || j > kind.dim() {
            return Err(SdpError::Parse { line, msg: format!("index ({i}, {j}) outside block {blk}") });
        }
        if matches!(kind, BlockKind::Diagonal(_)) && i != j {
            return Err(SdpError::Parse { line, msg: format!("off-diagonal entry in diagonal block {blk}") });
        }
        mats[matno].add(blk - 1, i - 1, j - 1, v);
    }
    let c = mats.remove(0);
    SdpProblem::new(blocks, c, mats, b).map_err(|e| SdpError::Parse { line: tk.last_line(), msg: e.to_string() })
}
