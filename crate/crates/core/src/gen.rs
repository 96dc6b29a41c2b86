//! Seeded random program generator.
//!
//! Emits self-contained sources: every array is declared with literal
//! extents, initialized by host loops, copied in and out of one data
//! region, and updated by one to three kernels drawn from the covered
//! construct set (maps, stencils, write chains, guarded reads,
//! indirect and atomic updates, reductions, block-style
//! multidimensional nests, sequential-indexed fallbacks).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write;

#[derive(Debug, Clone)]
pub struct GenOptions {
    pub max_extent: usize,
    pub max_kernels: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            max_extent: 24,
            max_kernels: 3,
        }
    }
}

pub fn generate(seed: u64, count: usize, opts: &GenOptions) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| one_program(&mut rng, opts)).collect()
}

struct Ctx {
    decls: String,
    host: String,
    kernels: Vec<String>,
    copyin: Vec<String>,
    copyout: Vec<String>,
    names: u32,
}

impl Ctx {
    fn new() -> Ctx {
        Ctx {
            decls: String::new(),
            host: String::new(),
            kernels: Vec::new(),
            copyin: Vec::new(),
            copyout: Vec::new(),
            names: 0,
        }
    }

    fn fresh(&mut self, base: &str) -> String {
        self.names += 1;
        format!("{base}{}", self.names)
    }

    fn float_array_1d(&mut self, rng: &mut ChaCha8Rng, n: usize, written: bool) -> String {
        let name = self.fresh("f");
        writeln!(self.decls, "double {name}[{n}];").unwrap();
        let a = rng.gen_range(1..7);
        let b = rng.gen_range(0..5);
        let m = rng.gen_range(5..23);
        writeln!(
            self.host,
            "for (int i0 = 0; i0 < {n}; i0++) {name}[i0] = (i0 * {a} + {b}) % {m} * 0.25 - 1.5;"
        )
        .unwrap();
        self.copyin.push(format!("{name}[0:{n}]"));
        if written {
            self.copyout.push(format!("{name}[0:{n}]"));
        }
        name
    }

    fn int_array_1d(&mut self, rng: &mut ChaCha8Rng, n: usize, modulo: usize, written: bool) -> String {
        let name = self.fresh("v");
        writeln!(self.decls, "int {name}[{n}];").unwrap();
        let a = rng.gen_range(1..9);
        let b = rng.gen_range(0..modulo.max(1));
        writeln!(
            self.host,
            "for (int i0 = 0; i0 < {n}; i0++) {name}[i0] = (i0 * {a} + {b}) % {modulo};"
        )
        .unwrap();
        self.copyin.push(format!("{name}[0:{n}]"));
        if written {
            self.copyout.push(format!("{name}[0:{n}]"));
        }
        name
    }

    fn float_array_nd(&mut self, rng: &mut ChaCha8Rng, extents: &[usize], written: bool) -> String {
        let name = self.fresh("g");
        let mut d = format!("double {name}");
        for e in extents {
            write!(d, "[{e}]").unwrap();
        }
        writeln!(self.decls, "{d};").unwrap();
        let a = rng.gen_range(1..7);
        let m = rng.gen_range(7..31);
        // flat init through nested loops
        let mut loops = String::new();
        let mut idx = String::new();
        let mut flat = String::from("0");
        for (k, e) in extents.iter().enumerate() {
            write!(loops, "for (int q{k} = 0; q{k} < {e}; q{k}++) ").unwrap();
            write!(idx, "[q{k}]").unwrap();
            flat = format!("({flat} * {e} + q{k})");
        }
        writeln!(
            self.host,
            "{loops}{name}{idx} = {flat} * {a} % {m} * 0.125 - 0.75;"
        )
        .unwrap();
        self.copyin.push(name.clone());
        if written {
            self.copyout.push(name.clone());
        }
        name
    }

    fn float_scalar(&mut self, init: &str) -> String {
        let name = self.fresh("s");
        writeln!(self.decls, "double {name};").unwrap();
        writeln!(self.host, "{name} = {init};").unwrap();
        name
    }
}

fn gang_header(rng: &mut ChaCha8Rng) -> &'static [&'static str] {
    match rng.gen_range(0..3) {
        0 => &["gang"],
        1 => &["gang", "vector"],
        _ => &[],
    }
}

fn one_program(rng: &mut ChaCha8Rng, opts: &GenOptions) -> String {
    let mut ctx = Ctx::new();
    let n_kernels = rng.gen_range(1..=opts.max_kernels.max(1));
    // array produced by the previous kernel, with its extent
    let mut carry: Option<(String, usize)> = None;
    for _ in 0..n_kernels {
        let choice = rng.gen_range(0..10);
        match choice {
            0 => map_kernel(rng, &mut ctx, opts, &mut carry),
            1 => stencil_1d(rng, &mut ctx, opts, &mut carry),
            2 => stencil_2d(rng, &mut ctx, opts, &mut carry),
            3 => stencil_3d(rng, &mut ctx, &mut carry),
            4 => chain_kernel(rng, &mut ctx, opts, &mut carry),
            5 => guarded_read_chain(rng, &mut ctx, opts, &mut carry),
            6 => indirect_kernel(rng, &mut ctx, opts),
            7 => atomic_kernel(rng, &mut ctx, opts),
            8 => reduction_kernel(rng, &mut ctx, opts, &mut carry),
            _ => block_kernel(rng, &mut ctx),
        }
    }
    // a final sequential-indexed kernel occasionally, to cover the
    // duplicated-execution path
    if rng.gen_bool(0.15) {
        seq_indexed_kernel(rng, &mut ctx, opts);
    }

    let mut out = String::new();
    out.push_str(&ctx.decls);
    out.push_str(&ctx.host);
    out.push_str("#pragma acc data");
    if !ctx.copyin.is_empty() {
        out.push_str(" copyin(");
        out.push_str(&ctx.copyin.join(", "));
        out.push(')');
    }
    if !ctx.copyout.is_empty() {
        out.push_str(" copyout(");
        out.push_str(&ctx.copyout.join(", "));
        out.push(')');
    }
    out.push_str("\n{\n");
    for k in &ctx.kernels {
        out.push_str(k);
    }
    out.push_str("}\n");
    out
}

fn extent(rng: &mut ChaCha8Rng, opts: &GenOptions) -> usize {
    rng.gen_range(6..=opts.max_extent.max(8))
}

fn pick_input(
    rng: &mut ChaCha8Rng,
    ctx: &mut Ctx,
    opts: &GenOptions,
    carry: &mut Option<(String, usize)>,
    n: usize,
) -> (String, usize) {
    // sometimes read the previous kernel's output to chain kernels
    if let Some(prev) = carry.take() {
        if rng.gen_bool(0.5) {
            return prev;
        }
        *carry = Some(prev);
    }
    let _ = opts;
    (ctx.float_array_1d(rng, n, false), n)
}

fn map_kernel(
    rng: &mut ChaCha8Rng,
    ctx: &mut Ctx,
    opts: &GenOptions,
    carry: &mut Option<(String, usize)>,
) {
    let n = extent(rng, opts);
    let (src, sn) = pick_input(rng, ctx, opts, carry, n);
    // the chained source may have a different extent; index modulo it
    let dst = ctx.float_array_1d(rng, n, true);
    let clauses = gang_header(rng).join(" ");
    let c = rng.gen_range(2..5);
    let body = match rng.gen_range(0..3) {
        0 => format!("{dst}[i] = {src}[i % {sn}] * {c}.0 + 0.5;"),
        1 => format!("{dst}[i] = fabs({src}[i % {sn}]) + {c}.0;"),
        _ => format!("{dst}[i] = ({src}[i % {sn}] > 0.0) ? {src}[i % {sn}] * 2.0 : -{src}[i % {sn}];"),
    };
    ctx.kernels.push(format!(
        "#pragma acc parallel loop {clauses}\nfor (int i = 0; i < {n}; i++) {body}\n"
    ));
    *carry = Some((dst, n));
}

fn stencil_1d(
    rng: &mut ChaCha8Rng,
    ctx: &mut Ctx,
    opts: &GenOptions,
    carry: &mut Option<(String, usize)>,
) {
    let n = extent(rng, opts).max(6);
    let p = ctx.float_array_1d(rng, n, false);
    let w = ctx.float_array_1d(rng, n, true);
    ctx.kernels.push(format!(
        "#pragma acc parallel loop gang\nfor (int i = 0; i < {n}; i++) {w}[i] = (i >= 1 && i <= {} ) ? 0.5 * {p}[i] + 0.25 * ({p}[i - 1] + {p}[i + 1]) : {p}[i];\n",
        n - 2
    ));
    *carry = Some((w, n));
}

fn stencil_2d(
    rng: &mut ChaCha8Rng,
    ctx: &mut Ctx,
    opts: &GenOptions,
    carry: &mut Option<(String, usize)>,
) {
    let ni = extent(rng, opts).min(14).max(5);
    let nj = extent(rng, opts).min(12).max(5);
    let p = ctx.float_array_nd(rng, &[ni, nj], false);
    let w = ctx.float_array_nd(rng, &[ni, nj], true);
    ctx.kernels.push(format!(
        "#pragma acc parallel loop gang\nfor (int i = 0; i < {ni}; i++) {{\n#pragma acc loop vector\nfor (int j = 0; j < {nj}; j++) {w}[i][j] = (i >= 1 && i <= {} && j >= 1 && j <= {}) ? 0.5 * {p}[i][j] + 0.125 * ({p}[i - 1][j] + {p}[i + 1][j] + {p}[i][j - 1] + {p}[i][j + 1]) : {p}[i][j];\n}}\n",
        ni - 2,
        nj - 2
    ));
    *carry = None;
}

fn stencil_3d(
    rng: &mut ChaCha8Rng,
    ctx: &mut Ctx,
    carry: &mut Option<(String, usize)>,
) {
    let (ni, nj, nk) = (
        rng.gen_range(5..9usize),
        rng.gen_range(5..8usize),
        rng.gen_range(5..8usize),
    );
    let p = ctx.float_array_nd(rng, &[ni, nj, nk], false);
    let w = ctx.float_array_nd(rng, &[ni, nj, nk], true);
    ctx.kernels.push(format!(
        "#pragma acc parallel loop gang\nfor (int i = 0; i < {ni}; i++) {{\n#pragma acc loop worker\nfor (int j = 0; j < {nj}; j++) {{\n#pragma acc loop vector\nfor (int k = 0; k < {nk}; k++) {w}[i][j][k] = (i >= 1 && i <= {mi} && j >= 1 && j <= {mj} && k >= 1 && k <= {mk}) ? 0.4 * {p}[i][j][k] + 0.1 * ({p}[i - 1][j][k] + {p}[i + 1][j][k] + {p}[i][j - 1][k] + {p}[i][j + 1][k] + {p}[i][j][k - 1] + {p}[i][j][k + 1]) : {p}[i][j][k];\n}}\n}}\n",
        mi = ni - 2,
        mj = nj - 2,
        mk = nk - 2
    ));
    *carry = None;
}

fn chain_kernel(
    rng: &mut ChaCha8Rng,
    ctx: &mut Ctx,
    opts: &GenOptions,
    carry: &mut Option<(String, usize)>,
) {
    let n = extent(rng, opts);
    let src = ctx.float_array_1d(rng, n, false);
    let a = ctx.float_array_1d(rng, n, true);
    let b = ctx.float_array_1d(rng, n, true);
    let d = ctx.float_array_1d(rng, n, true);
    let c1 = rng.gen_range(2..5);
    ctx.kernels.push(format!(
        "#pragma acc parallel loop gang\nfor (int i = 0; i < {n}; i++) {{\n{a}[i] = {src}[i] * {c1}.0;\n{b}[i] = {a}[i] + 1.0;\n{d}[i] = {b}[i] - {a}[i];\n}}\n"
    ));
    *carry = Some((d, n));
}

fn guarded_read_chain(
    rng: &mut ChaCha8Rng,
    ctx: &mut Ctx,
    opts: &GenOptions,
    carry: &mut Option<(String, usize)>,
) {
    let n = extent(rng, opts);
    let src = ctx.float_array_1d(rng, n, false);
    let a = ctx.float_array_1d(rng, n, true);
    let b = ctx.float_array_1d(rng, n, true);
    let t = ctx.fresh("t");
    writeln!(ctx.decls, "double {t};").unwrap();
    // the temporary is written first each iteration, so its incoming
    // value never matters; two index positions cover the guarded read
    ctx.kernels.push(format!(
        "#pragma acc parallel loop gang\nfor (int i = 0; i < {n}; i++) {{\n{t} = {src}[{n} - 1 - i];\n{a}[i] = {t} * 0.5;\n{b}[{n} - 1 - i] = {t} + {a}[i];\n}}\n"
    ));
    *carry = Some((b, n));
}

fn indirect_kernel(rng: &mut ChaCha8Rng, ctx: &mut Ctx, opts: &GenOptions) {
    let n = extent(rng, opts);
    let m = extent(rng, opts);
    let col = ctx.int_array_1d(rng, n, m, false);
    let v = ctx.float_array_1d(rng, n, false);
    let a = ctx.float_array_1d(rng, m, true);
    if rng.gen_bool(0.5) {
        ctx.kernels.push(format!(
            "#pragma acc parallel loop gang\nfor (int j = 0; j < {n}; j++) {a}[{col}[j]] = {v}[j];\n"
        ));
    } else {
        ctx.kernels.push(format!(
            "#pragma acc parallel loop gang\nfor (int j = 0; j < {n}; j++) {a}[{col}[j]] += {v}[j] * 0.5;\n"
        ));
    }
}

fn atomic_kernel(rng: &mut ChaCha8Rng, ctx: &mut Ctx, opts: &GenOptions) {
    let n = extent(rng, opts);
    let m = extent(rng, opts).min(12);
    let col = ctx.int_array_1d(rng, n, m, false);
    let hist = ctx.int_array_1d(rng, m, 1, true);
    ctx.kernels.push(format!(
        "#pragma acc parallel loop gang\nfor (int j = 0; j < {n}; j++) {{\n#pragma acc atomic\n{hist}[{col}[j]] += 1;\n}}\n"
    ));
}

fn reduction_kernel(
    rng: &mut ChaCha8Rng,
    ctx: &mut Ctx,
    opts: &GenOptions,
    carry: &mut Option<(String, usize)>,
) {
    let n = extent(rng, opts);
    let (a, an) = match carry.take() {
        Some(prev) if rng.gen_bool(0.5) => prev,
        other => {
            *carry = other;
            (ctx.float_array_1d(rng, n, false), n)
        }
    };
    let (op, init, update) = match rng.gen_range(0..3) {
        0 => ("+", "0.0", format!("sum += {a}[i % {an}] * 0.5;")),
        1 => (
            "max",
            "-1000.0",
            format!("sum = (sum > {a}[i % {an}]) ? sum : {a}[i % {an}];"),
        ),
        _ => (
            "min",
            "1000.0",
            format!("sum = (sum < {a}[i % {an}]) ? sum : {a}[i % {an}];"),
        ),
    };
    let sum = ctx.float_scalar(init);
    let update = update.replace("sum", &sum);
    ctx.kernels.push(format!(
        "#pragma acc parallel loop gang reduction({op}:{sum})\nfor (int i = 0; i < {n}; i++) {update}\n"
    ));
}

fn block_kernel(rng: &mut ChaCha8Rng, ctx: &mut Ctx) {
    let s = rng.gen_range(2..4usize);
    let e1 = rng.gen_range(5..9usize);
    let e2 = rng.gen_range(5..9usize);
    let lhs = ctx.float_array_nd(rng, &[s, s, e1, e2], true);
    ctx.kernels.push(format!(
        "#pragma acc parallel loop gang\nfor (int i = 0; i < {e1}; i++) {{\n#pragma acc loop vector\nfor (int k = 0; k < {e2}; k++) {{\nfor (int m = 0; m < {s}; m++) {{\nfor (int n = 0; n < {s}; n++) {{\n{lhs}[n][m][i][k] = {lhs}[n][m][i][k] - {lhs}[n][0][i][k] * 0.125;\n}}\n}}\n}}\n}}\n"
    ));
}

fn seq_indexed_kernel(rng: &mut ChaCha8Rng, ctx: &mut Ctx, opts: &GenOptions) {
    let n = extent(rng, opts);
    let s = rng.gen_range(3..6usize);
    let src = ctx.float_array_1d(rng, n, false);
    let acc = ctx.float_array_1d(rng, s, true);
    // every device computes the whole thing: the written array is
    // indexed only by the sequential iterator
    ctx.kernels.push(format!(
        "#pragma acc parallel loop gang\nfor (int i = 0; i < {n}; i++) {{\nfor (int m = 0; m < {s}; m++) {{\n{acc}[m] = {src}[i] * 0.25 + m;\n}}\n}}\n"
    ));
}
