//! Deterministic synthetic C-function corpora.
//!
//! Functions are drawn from a handful of code families. Members of a family
//! share almost every token and differ in a buffer size, a trailing logging
//! statement, and a single safe/unsafe fragment that decides the label, so
//! near-duplicate retrieval and a bag-of-tokens classifier both have signal.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, FunctionRecord, Label};

struct Family {
    name: &'static str,
    body: &'static str,
    unsafe_fragment: &'static str,
    safe_fragment: &'static str,
}

const FAMILIES: &[Family] = &[
    Family {
        name: "copy_name",
        body: "static int copy_name(struct session *s, const char *src)
{
    char buf[{SIZE}];
    int rc = 0;
    if (s == NULL || src == NULL) {
        return -1;
    }
    {FRAGMENT}
    rc = session_set_name(s, buf);
    if (rc != 0) {
        session_reset(s);
        return rc;
    }
    s->flags |= SESSION_NAMED;
    {NOISE}
    return 0;
}",
        unsafe_fragment: "strcpy(buf, src);",
        safe_fragment: "strncpy(buf, src, sizeof(buf) - 1);",
    },
    Family {
        name: "read_packet",
        body: "int read_packet(struct conn *c, uint8_t *out, size_t len)
{
    uint8_t header[{SIZE}];
    size_t got = 0;
    int err = conn_recv(c, header, sizeof(header), &got);
    if (err < 0) {
        return err;
    }
    size_t body = header[0] | (header[1] << 8);
    {FRAGMENT}
    c->stats.packets++;
    c->stats.bytes += body;
    {NOISE}
    return (int)body;
}",
        unsafe_fragment: "memcpy(out, header + 2, body);",
        safe_fragment: "if (body > len) { return -EINVAL; } memcpy(out, header + 2, body);",
    },
    Family {
        name: "lookup_entry",
        body: "struct entry *lookup_entry(struct table *t, int key)
{
    struct entry *e = NULL;
    int slot = key % {SIZE};
    if (t == NULL) {
        return NULL;
    }
    e = t->slots[slot];
    while (e != NULL && e->key != key) {
        e = e->next;
    }
    {FRAGMENT}
    t->hits++;
    {NOISE}
    return e;
}",
        unsafe_fragment: "e->refcount++;",
        safe_fragment: "if (e != NULL) { e->refcount++; }",
    },
    Family {
        name: "scale_buffer",
        body: "int scale_buffer(struct image *img, unsigned int factor)
{
    unsigned int width = img->width;
    unsigned int height = img->height;
    unsigned int total = 0;
    if (factor == 0 || factor > {SIZE}) {
        return -1;
    }
    {FRAGMENT}
    img->pixels = realloc(img->pixels, total);
    if (img->pixels == NULL) {
        return -ENOMEM;
    }
    img->width = width * factor;
    {NOISE}
    return 0;
}",
        unsafe_fragment: "total = width * height * factor * factor;",
        safe_fragment: "if (width > UINT_MAX / factor / factor / height) { return -1; } total = width * height * factor * factor;",
    },
    Family {
        name: "release_ctx",
        body: "void release_ctx(struct ctx *ctx)
{
    int i;
    if (ctx == NULL) {
        return;
    }
    for (i = 0; i < {SIZE}; i++) {
        if (ctx->workers[i] != NULL) {
            worker_stop(ctx->workers[i]);
        }
    }
    free(ctx->buffer);
    {FRAGMENT}
    ctx->state = CTX_RELEASED;
    {NOISE}
}",
        unsafe_fragment: "ctx_flush(ctx, ctx->buffer);",
        safe_fragment: "ctx->buffer = NULL;",
    },
];

const SIZES: &[&str] = &["16", "32", "64", "128", "256"];

const NOISE: &[&str] = &[
    "log_debug(\"done\");",
    "trace_event(TRACE_EXIT);",
    "counter_inc(&global_counter);",
    "/* nothing to log */",
];

/// Generates `n` records with ids `fn0000..` under project name `project`.
pub fn synthetic_corpus(n: usize, seed: u64, project: &str) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family_flip: Vec<bool> = FAMILIES.iter().map(|_| rng.gen_bool(0.5)).collect();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let family_idx = i % FAMILIES.len();
        let family = &FAMILIES[family_idx];
        // Members of a family alternate labels; the seed picks the phase.
        let vulnerable = (i / FAMILIES.len()).is_multiple_of(2) ^ family_flip[family_idx];
        let size = SIZES[rng.gen_range(0..SIZES.len())];
        let noise = NOISE[rng.gen_range(0..NOISE.len())];
        let fragment = if vulnerable {
            family.unsafe_fragment
        } else {
            family.safe_fragment
        };
        let source = family
            .body
            .replace("{SIZE}", size)
            .replace("{FRAGMENT}", fragment)
            .replace("{NOISE}", noise);
        let mut record = FunctionRecord::new(
            format!("fn{i:04}"),
            project,
            source,
            Label::from_bool(vulnerable),
        );
        record.commit = Some(format!("{}-{i}", family.name));
        records.push(record);
    }
    Corpus::from_records(records).expect("synthetic ids are unique")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_both_labels() {
        let a = synthetic_corpus(50, 9, "synth");
        let b = synthetic_corpus(50, 9, "synth");
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let counts = a.label_counts();
        assert!(counts.vulnerable > 10 && counts.benign > 10, "{counts:?}");
    }
}
