//! Paged, reference-counted KV-cache accounting.
//!
//! This is a cache-accounting simulator: no attention values are stored, only
//! token counts per fixed-capacity page plus a byte-cost scalar per token.
//! Particles hold page-id sequences into a shared pool. Duplicating a
//! particle during resampling copies page ids and bumps reference counts;
//! the KV content itself is never moved, which is what the
//! `content_copy_bytes` counter certifies. Full pages are immutable forever;
//! copy-on-write applies only when a particle appends into a partially
//! filled page it shares with others.
//!
//! A shadow accountant charges every particle its full private length,
//! yielding the page count a no-sharing layout would need and hence the
//! reduction factor from prefix sharing.

use crate::error::{Error, Result};

pub type PageId = usize;

#[derive(Clone, Copy, Debug)]
pub struct PageTableConfig {
    /// Tokens per page.
    pub page_capacity: usize,
    /// Pool size; allocation past this fails with `OutOfPages`.
    pub pool_pages: usize,
    /// KV bytes per token, the `d_model`-dependent scalar in the byte cost.
    pub bytes_per_token: u64,
}

impl Default for PageTableConfig {
    fn default() -> Self {
        PageTableConfig {
            page_capacity: 16,
            pool_pages: 4096,
            bytes_per_token: 1,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Page {
    filled: usize,
    refcount: usize,
}

#[derive(Clone, Debug, Default)]
struct Seq {
    pages: Vec<PageId>,
    tokens: usize,
}

/// Counters reported by [`PageTable::usage_stats`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UsageStats {
    pub unique_pages_now: usize,
    pub peak_unique_pages: usize,
    pub naive_peak_pages: usize,
    /// `1 - peak_unique / naive_peak`; zero when nothing was ever allocated.
    pub reduction: f64,
    pub content_copy_bytes: u64,
    pub metadata_ops: u64,
    pub allocated_pages: u64,
}

impl UsageStats {
    pub fn to_key_values(&self) -> String {
        format!(
            "unique_pages_now={}\npeak_unique_pages={}\nnaive_peak_pages={}\nreduction={}\ncontent_copy_bytes={}\nmetadata_ops={}\nallocated_pages={}\n",
            self.unique_pages_now,
            self.peak_unique_pages,
            self.naive_peak_pages,
            self.reduction,
            self.content_copy_bytes,
            self.metadata_ops,
            self.allocated_pages,
        )
    }
}

#[derive(Clone, Debug)]
pub struct PageTable {
    cfg: PageTableConfig,
    pages: Vec<Page>,
    free: Vec<PageId>,
    seqs: Vec<Option<Seq>>,
    live_pages: usize,
    content_copy_bytes: u64,
    metadata_ops: u64,
    allocated_pages: u64,
    peak_unique_pages: usize,
    naive_peak_pages: usize,
}

impl PageTable {
    /// A table with `particles` registered empty sequences.
    pub fn new(cfg: PageTableConfig, particles: usize) -> Result<Self> {
        if cfg.page_capacity == 0 {
            return Err(Error::InvalidParameter("page capacity must be >= 1".into()));
        }
        if cfg.pool_pages == 0 {
            return Err(Error::InvalidParameter("pool must hold >= 1 page".into()));
        }
        let free = (0..cfg.pool_pages).rev().collect();
        Ok(PageTable {
            cfg,
            pages: vec![Page::default(); cfg.pool_pages],
            free,
            seqs: vec![Some(Seq::default()); particles],
            live_pages: 0,
            content_copy_bytes: 0,
            metadata_ops: 0,
            allocated_pages: 0,
            peak_unique_pages: 0,
            naive_peak_pages: 0,
        })
    }

    pub fn config(&self) -> PageTableConfig {
        self.cfg
    }

    pub fn particles(&self) -> usize {
        self.seqs.len()
    }

    pub fn tokens_of(&self, particle: usize) -> Result<usize> {
        Ok(self.seq(particle)?.tokens)
    }

    pub fn pages_of(&self, particle: usize) -> Result<&[PageId]> {
        Ok(&self.seq(particle)?.pages)
    }

    pub fn refcount(&self, page: PageId) -> usize {
        self.pages[page].refcount
    }

    fn seq(&self, particle: usize) -> Result<&Seq> {
        self.seqs
            .get(particle)
            .and_then(|s| s.as_ref())
            .ok_or(Error::UnknownHandle(particle))
    }

    fn alloc_page(&mut self) -> Result<PageId> {
        let id = self.free.pop().ok_or(Error::OutOfPages)?;
        self.pages[id] = Page {
            filled: 0,
            refcount: 1,
        };
        self.live_pages += 1;
        self.allocated_pages += 1;
        Ok(id)
    }

    fn unref_page(&mut self, id: PageId) {
        let page = &mut self.pages[id];
        debug_assert!(page.refcount > 0, "unref of free page");
        page.refcount -= 1;
        if page.refcount == 0 {
            self.live_pages -= 1;
            self.free.push(id);
        }
    }

    /// Fill all particles' caches with one shared prompt of `tokens` tokens.
    /// Requires every sequence to be live and empty.
    pub fn seed_shared_prompt(&mut self, tokens: usize) -> Result<()> {
        for (i, seq) in self.seqs.iter().enumerate() {
            match seq {
                Some(s) if s.pages.is_empty() => {}
                Some(_) => {
                    return Err(Error::InvalidParameter(format!(
                        "particle {i} already holds pages; prompt must come first"
                    )));
                }
                None => return Err(Error::UnknownHandle(i)),
            }
        }
        let n = self.seqs.len();
        if n == 0 || tokens == 0 {
            return Ok(());
        }
        let mut prompt_pages = Vec::new();
        let mut remaining = tokens;
        while remaining > 0 {
            let id = self.alloc_page()?;
            let take = remaining.min(self.cfg.page_capacity);
            self.pages[id].filled = take;
            self.pages[id].refcount = n;
            remaining -= take;
            prompt_pages.push(id);
        }
        for seq in self.seqs.iter_mut().flatten() {
            seq.pages.extend_from_slice(&prompt_pages);
            seq.tokens = tokens;
            self.metadata_ops += prompt_pages.len() as u64;
        }
        self.update_peaks();
        self.debug_check();
        Ok(())
    }

    /// Append `n` tokens to a particle's cache. An exclusively owned partial
    /// tail page is filled in place; a shared partial tail is copied first
    /// (the only content copy in the design), then fresh pages are allocated
    /// as needed.
    pub fn append_tokens(&mut self, particle: usize, n: usize) -> Result<()> {
        self.seq(particle)?;
        if n == 0 {
            return Ok(());
        }
        let mut remaining = n;
        let cap = self.cfg.page_capacity;

        let tail = self.seqs[particle]
            .as_ref()
            .expect("checked live")
            .pages
            .last()
            .copied();
        if let Some(tail_id) = tail {
            let (filled, refcount) = {
                let p = &self.pages[tail_id];
                (p.filled, p.refcount)
            };
            if filled < cap {
                let write_id = if refcount == 1 {
                    tail_id
                } else {
                    // Copy-on-write of the shared partial tail.
                    let new_id = self.alloc_page()?;
                    self.pages[new_id].filled = filled;
                    self.content_copy_bytes += filled as u64 * self.cfg.bytes_per_token;
                    self.unref_page(tail_id);
                    let seq = self.seqs[particle].as_mut().expect("checked live");
                    *seq.pages.last_mut().expect("tail exists") = new_id;
                    self.metadata_ops += 1;
                    new_id
                };
                let take = remaining.min(cap - self.pages[write_id].filled);
                self.pages[write_id].filled += take;
                remaining -= take;
            }
        }
        while remaining > 0 {
            let id = self.alloc_page()?;
            let take = remaining.min(cap);
            self.pages[id].filled = take;
            remaining -= take;
            let seq = self.seqs[particle].as_mut().expect("checked live");
            seq.pages.push(id);
            self.metadata_ops += 1;
        }
        self.seqs[particle].as_mut().expect("checked live").tokens += n;
        self.update_peaks();
        self.debug_check();
        Ok(())
    }

    /// Replace every particle's page list with its ancestor's. Pure metadata:
    /// page ids are copied and reference counts adjusted; pages dropping to
    /// refcount zero are freed; no KV content moves.
    pub fn resample_pages(&mut self, ancestors: &[usize]) -> Result<()> {
        if ancestors.len() != self.seqs.len() {
            return Err(Error::InvalidParameter(format!(
                "ancestor vector length {} != particle count {}",
                ancestors.len(),
                self.seqs.len()
            )));
        }
        // The whole population resamples together, so every slot must be
        // live, not just the referenced ancestors.
        if let Some(dead) = self.seqs.iter().position(Option::is_none) {
            return Err(Error::UnknownHandle(dead));
        }
        let mut new_seqs = Vec::with_capacity(ancestors.len());
        for &a in ancestors {
            new_seqs.push(self.seq(a)?.clone());
        }
        // Increment refcounts on the new lists before releasing the old so
        // shared pages never transiently hit zero.
        for seq in &new_seqs {
            for &id in &seq.pages {
                self.pages[id].refcount += 1;
            }
            self.metadata_ops += seq.pages.len() as u64;
        }
        let old: Vec<Seq> = self
            .seqs
            .iter_mut()
            .map(|s| s.take().expect("liveness checked above"))
            .collect();
        for seq in old {
            for id in seq.pages {
                self.unref_page(id);
            }
        }
        for (slot, seq) in new_seqs.into_iter().enumerate() {
            self.seqs[slot] = Some(seq);
        }
        self.update_peaks();
        self.debug_check();
        Ok(())
    }

    /// Drop a particle: decrement all its refcounts, free zero-refcount
    /// pages. Releasing twice is a usage error.
    pub fn release(&mut self, particle: usize) -> Result<()> {
        let seq = self
            .seqs
            .get_mut(particle)
            .and_then(Option::take)
            .ok_or(Error::UnknownHandle(particle))?;
        self.metadata_ops += seq.pages.len() as u64;
        for id in seq.pages {
            self.unref_page(id);
        }
        self.update_peaks();
        self.debug_check();
        Ok(())
    }

    pub fn usage_stats(&self) -> UsageStats {
        let reduction = if self.naive_peak_pages == 0 {
            0.0
        } else {
            1.0 - self.peak_unique_pages as f64 / self.naive_peak_pages as f64
        };
        UsageStats {
            unique_pages_now: self.live_pages,
            peak_unique_pages: self.peak_unique_pages,
            naive_peak_pages: self.naive_peak_pages,
            reduction,
            content_copy_bytes: self.content_copy_bytes,
            metadata_ops: self.metadata_ops,
            allocated_pages: self.allocated_pages,
        }
    }

    fn naive_pages_now(&self) -> usize {
        self.seqs
            .iter()
            .flatten()
            .map(|s| s.tokens.div_ceil(self.cfg.page_capacity))
            .sum()
    }

    fn update_peaks(&mut self) {
        self.peak_unique_pages = self.peak_unique_pages.max(self.live_pages);
        self.naive_peak_pages = self.naive_peak_pages.max(self.naive_pages_now());
    }

    /// Refcount conservation: the sum of reference counts over live pages
    /// equals the total page-list length over live particles.
    pub fn check_invariants(&self) -> Result<()> {
        let refcount_sum: usize = self.pages.iter().map(|p| p.refcount).sum();
        let list_sum: usize = self.seqs.iter().flatten().map(|s| s.pages.len()).sum();
        if refcount_sum != list_sum {
            return Err(Error::Internal(format!(
                "refcount sum {refcount_sum} != page-list length sum {list_sum}"
            )));
        }
        let live = self.pages.iter().filter(|p| p.refcount > 0).count();
        if live != self.live_pages {
            return Err(Error::Internal(format!(
                "live page counter {} != actual {live}",
                self.live_pages
            )));
        }
        if self.naive_pages_now() < self.live_pages {
            return Err(Error::Internal(
                "naive accounting fell below unique page count".into(),
            ));
        }
        Ok(())
    }

    fn debug_check(&self) {
        #[cfg(debug_assertions)]
        if let Err(e) = self.check_invariants() {
            panic!("{e}");
        }
    }
}

/// Replay a workload file: an `init` line followed by one mutation per line.
///
/// ```text
/// init particles=8 capacity=16 pool=4096 bytes_per_token=1
/// prompt 32
/// append 0 17
/// resample 0 0 0 0 0 0 0 0
/// release 3
/// ```
pub fn replay_workload(text: &str) -> Result<PageTable> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let init = lines
        .next()
        .ok_or_else(|| Error::Parse("empty workload".into()))?;
    let mut words = init.split_whitespace();
    if words.next() != Some("init") {
        return Err(Error::Parse(format!("expected init line, got: {init}")));
    }
    let mut cfg = PageTableConfig::default();
    let mut particles = 0usize;
    for kv in words {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad init field: {kv}")))?;
        match key {
            "particles" => particles = parse_num(value)?,
            "capacity" => cfg.page_capacity = parse_num(value)?,
            "pool" => cfg.pool_pages = parse_num(value)?,
            "bytes_per_token" => cfg.bytes_per_token = parse_num(value)?,
            other => return Err(Error::Parse(format!("unknown init field: {other}"))),
        }
    }
    let mut pt = PageTable::new(cfg, particles)?;
    for line in lines {
        let mut words = line.split_whitespace();
        match words.next() {
            Some("prompt") => {
                let tokens: usize = parse_num(next_word(&mut words, line)?)?;
                pt.seed_shared_prompt(tokens)?;
            }
            Some("append") => {
                let particle: usize = parse_num(next_word(&mut words, line)?)?;
                let n: usize = parse_num(next_word(&mut words, line)?)?;
                pt.append_tokens(particle, n)?;
            }
            Some("resample") => {
                let ancestors: Vec<usize> = words.map(parse_num).collect::<Result<_>>()?;
                pt.resample_pages(&ancestors)?;
            }
            Some("release") => {
                let particle: usize = parse_num(next_word(&mut words, line)?)?;
                pt.release(particle)?;
            }
            Some(op) => return Err(Error::Parse(format!("unknown workload op: {op}"))),
            None => unreachable!("blank lines filtered"),
        }
    }
    Ok(pt)
}

fn next_word<'a>(words: &mut impl Iterator<Item = &'a str>, line: &str) -> Result<&'a str> {
    words
        .next()
        .ok_or_else(|| Error::Parse(format!("short workload line: {line}")))
}

fn parse_num<T: std::str::FromStr>(word: &str) -> Result<T> {
    word.parse()
        .map_err(|_| Error::Parse(format!("bad number: {word}")))
}
