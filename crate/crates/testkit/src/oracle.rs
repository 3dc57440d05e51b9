//! Brute-force branch resolution by rescanning code.
//!
//! Targets follow the engine's convention: a branch to a loop lands on the
//! `loop` opcode, every other branch lands on the construct's `end` opcode,
//! and the false path of an `if` with an `else` lands just past the `else`.
//! Value and pop counts come from replaying operand-stack heights with a
//! list-based control stack.

use sidewasm::binary::Module;

use crate::decode::{decode_all, decode_at, entry_count, err, simple_effect, BlockTy, Imm, Instr, OracleError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanResult {
    pub target_ip: usize,
    pub valcnt: u32,
    pub popcnt: u32,
}

/// What the validator must emit for one sidetable slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpectedEntry {
    /// Offset of the instruction owning the entry.
    pub origin: usize,
    pub target_ip: usize,
    /// Sidetable index execution continues from after the transfer.
    pub target_stp: usize,
    pub valcnt: u32,
    pub popcnt: u32,
    /// The leading entry of a `br_table`, which carries the case count.
    pub header: bool,
}

const FUNC: u8 = 0xff;

#[derive(Debug, Clone)]
struct Ctl {
    op: u8,
    /// Index of the opening instruction (or usize::MAX for the function).
    at: usize,
    height: usize,
    params: usize,
    results: usize,
    unreachable: bool,
}

impl Ctl {
    fn label_arity(&self) -> usize {
        if self.op == 0x03 {
            self.params
        } else {
            self.results
        }
    }
}

/// Decoded view of one function for oracle queries.
pub struct FuncScan<'m> {
    module: &'m Module,
    pub func: u32,
    pub instrs: Vec<Instr>,
    num_results: usize,
}

pub(crate) fn block_arity(module: &Module, bt: BlockTy) -> (usize, usize) {
    match bt {
        BlockTy::Empty => (0, 0),
        BlockTy::Val(_) => (0, 1),
        BlockTy::Type(i) => {
            let t = &module.types[i as usize];
            (t.params.len(), t.results.len())
        }
    }
}

/// Index of the `else` (if any) and matching `end` of the construct opened
/// by `instrs[at]`, found by a forward nesting count.
pub fn matching_end(instrs: &[Instr], at: usize) -> Result<(Option<usize>, usize), OracleError> {
    let mut depth = 0usize;
    let mut else_at = None;
    for (j, i) in instrs.iter().enumerate().skip(at) {
        match i.op {
            0x02..=0x04 => depth += 1,
            0x05 if depth == 1 => else_at = Some(j),
            0x0b => {
                depth -= 1;
                if depth == 0 {
                    return Ok((else_at, j));
                }
            }
            _ => {}
        }
    }
    err("unterminated construct")
}

/// The same, scanning raw bytes from the construct's opcode offset.
pub fn matching_end_bytes(bytes: &[u8], start_ip: usize) -> Result<(Option<usize>, usize), OracleError> {
    let mut depth = 0usize;
    let mut else_ip = None;
    let mut p = start_ip;
    loop {
        let i = decode_at(bytes, p)?;
        match i.op {
            0x02..=0x04 => depth += 1,
            0x05 if depth == 1 => else_ip = Some(p),
            0x0b => {
                depth -= 1;
                if depth == 0 {
                    return Ok((else_ip, p));
                }
            }
            _ => {}
        }
        p = i.next;
    }
}

impl<'m> FuncScan<'m> {
    pub fn new(module: &'m Module, func: u32) -> Result<Self, OracleError> {
        let Some(decl) = module.defined_function(func) else { return err(format!("function {func} is not defined")) };
        let body = &decl.body;
        let instrs = decode_all(module.bytes(), body.code_start, body.code_end)?;
        let num_results = module.types[decl.type_index as usize].results.len();
        Ok(Self { module, func, instrs, num_results })
    }

    fn index_of(&self, ip: usize) -> Result<usize, OracleError> {
        self.instrs.binary_search_by_key(&ip, |i| i.pos).or_else(|_| err(format!("{ip} is not an instruction boundary")))
    }

    fn end_ip(&self) -> usize {
        self.instrs.last().expect("non-empty body").pos
    }

    /// Target of label `depth` seen from instruction `k`, found by walking
    /// backwards to the enclosing construct and then forwards to its end.
    pub fn backward_target(&self, k: usize, depth: u32) -> Result<usize, OracleError> {
        let mut remaining = depth;
        let mut nest = 0usize;
        for j in (0..k).rev() {
            match self.instrs[j].op {
                0x0b => nest += 1,
                0x02..=0x04 if nest > 0 => nest -= 1,
                0x02..=0x04 => {
                    if remaining == 0 {
                        if self.instrs[j].op == 0x03 {
                            return Ok(self.instrs[j].pos);
                        }
                        let (_, e) = matching_end(&self.instrs, j)?;
                        return Ok(self.instrs[e].pos);
                    }
                    remaining -= 1;
                }
                _ => {}
            }
        }
        if remaining == 0 {
            Ok(self.end_ip())
        } else {
            err("branch depth exceeds nesting")
        }
    }

    fn arity_of(&self, bt: BlockTy) -> (usize, usize) {
        block_arity(self.module, bt)
    }

    fn call_effect(&self, i: &Instr) -> Result<(usize, usize), OracleError> {
        let ft = match (i.op, &i.imm) {
            (0x10, Imm::Idx(f)) => self.module.func_type(*f),
            (0x11, Imm::Two(t, _)) => self.module.types.get(*t as usize),
            _ => None,
        };
        let Some(ft) = ft else { return err("bad call") };
        Ok((ft.params.len() + usize::from(i.op == 0x11), ft.results.len()))
    }

    /// Walks the body once, handing each branch-family instruction together
    /// with the control stack and operand height in force just before it.
    fn replay(&self, mut visit: impl FnMut(usize, &[Ctl], usize) -> Result<bool, OracleError>) -> Result<(), OracleError> {
        let mut ctls = vec![Ctl {
            op: FUNC,
            at: usize::MAX,
            height: 0,
            params: 0,
            results: self.num_results,
            unreachable: false,
        }];
        let mut h = 0usize;
        fn pop(ctls: &[Ctl], h: &mut usize, n: usize) -> Result<(), OracleError> {
            let top = ctls.last().expect("control stack");
            if top.unreachable {
                *h = h.saturating_sub(n).max(top.height);
            } else if *h < top.height + n {
                return err("operand stack underflow in replay");
            } else {
                *h -= n;
            }
            Ok(())
        }
        fn kill(ctls: &mut [Ctl], h: &mut usize) {
            let top = ctls.last_mut().expect("control stack");
            top.unreachable = true;
            *h = top.height;
        }
        for (k, i) in self.instrs.iter().enumerate() {
            if matches!(i.op, 0x04 | 0x05 | 0x0c | 0x0d | 0x0e) && !visit(k, &ctls, h)? {
                return Ok(());
            }
            match i.op {
                0x02..=0x04 => {
                    let Imm::Block(bt) = i.imm else { unreachable!() };
                    let (p, r) = self.arity_of(bt);
                    if i.op == 0x04 {
                        pop(&ctls, &mut h, 1)?;
                    }
                    pop(&ctls, &mut h, p)?;
                    ctls.push(Ctl { op: i.op, at: k, height: h, params: p, results: r, unreachable: false });
                    h += p;
                }
                0x05 => {
                    let top = ctls.last_mut().expect("if");
                    top.unreachable = false;
                    h = top.height + top.params;
                }
                0x0b => {
                    let c = ctls.pop().expect("matching construct");
                    h = c.height + c.results;
                    if ctls.is_empty() {
                        break;
                    }
                }
                0x0c | 0x0e | 0x0f | 0x00 => kill(&mut ctls, &mut h),
                0x0d => pop(&ctls, &mut h, 1)?,
                0x10 | 0x11 => {
                    let (p, r) = self.call_effect(i)?;
                    pop(&ctls, &mut h, p)?;
                    h += r;
                }
                _ => {
                    let Some((p, r)) = simple_effect(i) else { return err(format!("no effect for {:#x}", i.op)) };
                    pop(&ctls, &mut h, p)?;
                    h += r;
                }
            }
        }
        Ok(())
    }

    fn resolve(&self, ctls: &[Ctl], depth: u32, h: usize) -> Result<ScanResult, OracleError> {
        let Some(target) = ctls.len().checked_sub(1 + depth as usize).map(|t| &ctls[t]) else {
            return err("branch depth exceeds nesting");
        };
        let valcnt = target.label_arity();
        let dead = ctls.last().expect("control stack").unreachable;
        let popcnt = if dead { 0 } else { h - target.height - valcnt };
        let target_ip = match target.op {
            FUNC => self.end_ip(),
            0x03 => self.instrs[target.at].pos,
            _ => self.instrs[matching_end(&self.instrs, target.at)?.1].pos,
        };
        Ok(ScanResult { target_ip, valcnt: valcnt as u32, popcnt: popcnt as u32 })
    }

    fn entries_at(&self, k: usize, ctls: &[Ctl], h: usize, out: &mut Vec<ExpectedEntry>) -> Result<(), OracleError> {
        let i = &self.instrs[k];
        let mut push = |r: ScanResult, header: bool| {
            out.push(ExpectedEntry {
                origin: i.pos,
                target_ip: r.target_ip,
                target_stp: 0,
                valcnt: r.valcnt,
                popcnt: r.popcnt,
                header,
            })
        };
        match (&i.op, &i.imm) {
            (0x04, _) => {
                let (else_at, end_at) = matching_end(&self.instrs, k)?;
                let target_ip = match else_at {
                    Some(e) => self.instrs[e].next,
                    None => self.instrs[end_at].pos,
                };
                push(ScanResult { target_ip, valcnt: 0, popcnt: 0 }, false);
            }
            (0x05, _) => {
                let top = ctls.last().expect("if");
                let (_, end_at) = matching_end(&self.instrs, top.at)?;
                push(ScanResult { target_ip: self.instrs[end_at].pos, valcnt: top.results as u32, popcnt: 0 }, false);
            }
            (0x0c, Imm::Idx(d)) => push(self.resolve(ctls, *d, h)?, false),
            (0x0d, Imm::Idx(d)) => push(self.resolve(ctls, *d, after_pop(ctls, h))?, false),
            (0x0e, Imm::Table(targets, default)) => {
                let h = after_pop(ctls, h);
                push(ScanResult { target_ip: i.pos, valcnt: targets.len() as u32, popcnt: 0 }, true);
                for &d in targets.iter().chain(std::iter::once(default)) {
                    push(self.resolve(ctls, d, h)?, false);
                }
            }
            _ => return err("not a branch"),
        }
        Ok(())
    }

    /// Every sidetable entry the function should have, in emission order.
    pub fn expected_entries(&self) -> Result<Vec<ExpectedEntry>, OracleError> {
        let mut out = Vec::new();
        self.replay(|k, ctls, h| {
            self.entries_at(k, ctls, h, &mut out)?;
            Ok(true)
        })?;
        let origins: Vec<usize> = out.iter().map(|e| e.origin).collect();
        for (idx, e) in out.iter_mut().enumerate() {
            e.target_stp = if e.header { idx } else { origins.partition_point(|&o| o < e.target_ip) };
        }
        Ok(out)
    }

    /// Resolves one branch: `branch_ip` addresses a `br`, `br_if`, `br_table`
    /// (with `depth` naming the case label), `if` (false path) or `else`.
    pub fn scan(&self, branch_ip: usize, depth: u32) -> Result<ScanResult, OracleError> {
        let k = self.index_of(branch_ip)?;
        let op = self.instrs[k].op;
        if !matches!(op, 0x04 | 0x05 | 0x0c | 0x0d | 0x0e) {
            return err(format!("{branch_ip} is not a branch"));
        }
        let mut result = None;
        self.replay(|j, ctls, h| {
            if j != k {
                return Ok(true);
            }
            result = Some(match op {
                0x04 | 0x05 => {
                    let mut v = Vec::new();
                    self.entries_at(k, ctls, h, &mut v)?;
                    let e = v[0];
                    ScanResult { target_ip: e.target_ip, valcnt: e.valcnt, popcnt: e.popcnt }
                }
                0x0c => self.resolve(ctls, depth, h)?,
                _ => self.resolve(ctls, depth, after_pop(ctls, h))?,
            });
            Ok(false)
        })?;
        result.ok_or_else(|| OracleError("branch not reached by replay".into()))
    }

    /// Number of entries by the counting law: one per `br`, `br_if`, `if`
    /// and `else`, and two plus the case count per `br_table`.
    pub fn entry_count_law(&self) -> usize {
        self.instrs.iter().map(entry_count).sum()
    }
}

fn after_pop(ctls: &[Ctl], h: usize) -> usize {
    let top = ctls.last().expect("control stack");
    if top.unreachable {
        h.saturating_sub(1).max(top.height)
    } else {
        h - 1
    }
}

/// Resolves a branch of function `func`; see [`FuncScan::scan`].
pub fn scan_branch_target(module: &Module, func: u32, branch_ip: usize, depth: u32) -> Result<ScanResult, OracleError> {
    FuncScan::new(module, func)?.scan(branch_ip, depth)
}
