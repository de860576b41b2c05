use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::config::{GeneratorConfig, PatternSite, SubProcess};
use super::SyngenError;
use crate::sfiles::{validate, FlowsheetGraph, StreamEdge, UnitCategory};

pub const MAX_RESAMPLES: usize = 100;

/// An open outlet stream that still needs a downstream sub-process.
#[derive(Debug, Clone)]
struct Outlet {
    node: usize,
    tag: Option<&'static str>,
    /// Mixer upstream of a reaction waiting for a recycle stream.
    recycle_to: Option<usize>,
    depth: usize,
}

struct Builder<'a, R: Rng> {
    cfg: &'a GeneratorConfig,
    rng: &'a mut R,
    g: FlowsheetGraph,
    heat_groups: u32,
}

fn pick<'a, R: Rng, T>(rng: &mut R, items: &'a [(T, f64)]) -> &'a T {
    let w = WeightedIndex::new(items.iter().map(|(_, p)| *p)).expect("weights are valid");
    &items[w.sample(rng)].0
}

impl<R: Rng> Builder<'_, R> {
    fn unit(&mut self, cat: UnitCategory) -> usize {
        self.g.add_unit(cat)
    }

    fn link(&mut self, src: usize, src_tag: Option<&str>, dst: usize, dst_tag: Option<&str>) {
        let mut e = StreamEdge::new(src, dst);
        if let Some(t) = src_tag {
            e = e.with_src_tag(t);
        }
        if let Some(t) = dst_tag {
            e = e.with_dst_tag(t);
        }
        self.g.add_edge(e);
    }

    /// Appends a unit to an outlet and advances the outlet to it.
    fn attach(&mut self, out: &mut Outlet, cat: UnitCategory, dst_tag: Option<&str>) -> usize {
        let node = self.unit(cat);
        self.link(out.node, out.tag, node, dst_tag);
        out.node = node;
        out.tag = None;
        node
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }

    fn pattern(&mut self, out: &mut Outlet, site: PatternSite) {
        let w = &self.cfg.pattern_weights[&site];
        let counts: Vec<(usize, f64)> = w.count.iter().copied().enumerate().collect();
        let units: Vec<(String, f64)> = w.units.iter().map(|(k, v)| (k.clone(), *v)).collect();
        let n = *pick(self.rng, &counts);
        for _ in 0..n {
            let name = pick(self.rng, &units).clone();
            let cat = UnitCategory::from_known(&name).expect("validated unit name");
            self.attach(out, cat, None);
        }
    }

    /// A raw material with its pre-processing pattern.
    fn feed(&mut self) -> Outlet {
        let raw = self.unit(UnitCategory::Raw);
        let mut out = Outlet { node: raw, tag: None, recycle_to: None, depth: 0 };
        self.pattern(&mut out, PatternSite::Feed);
        out
    }

    fn feed_into(&mut self, dst: usize, dst_tag: Option<&str>) {
        let f = self.feed();
        self.link(f.node, f.tag, dst, dst_tag);
    }

    /// Routes part of the outlet back to the waiting mixer through a splitter.
    fn split_recycle(&mut self, out: &mut Outlet) {
        if let Some(mix) = out.recycle_to.take() {
            let splt = self.attach(out, UnitCategory::Splitter, None);
            self.link(splt, None, mix, None);
        }
    }

    fn build(&mut self) -> Vec<Outlet> {
        let mut out = self.feed();
        let counts: Vec<(usize, f64)> = self.cfg.feed_count.iter().copied().enumerate().collect();
        let extra_feeds = *pick(self.rng, &counts);
        if extra_feeds > 0 {
            let mix = self.attach(&mut out, UnitCategory::Mixer, None);
            for _ in 0..extra_feeds {
                self.feed_into(mix, None);
            }
        }
        let first: Vec<(SubProcess, f64)> = self.cfg.first_subprocess.iter().map(|(k, v)| (*k, *v)).collect();
        let sp = *pick(self.rng, &first);
        self.expand(out, sp)
    }

    fn expand(&mut self, out: Outlet, sp: SubProcess) -> Vec<Outlet> {
        match sp {
            SubProcess::Reaction => self.reaction(out),
            SubProcess::ThermalSeparation => {
                let unit = pick(
                    self.rng,
                    &[(UnitCategory::Distillation, 0.6), (UnitCategory::Rectification, 0.25), (UnitCategory::Flash, 0.15)],
                )
                .clone();
                self.separation(out, unit, None, [Some("tout"), Some("bout")])
            }
            SubProcess::CountercurrentSeparation => {
                let unit = pick(self.rng, &[(UnitCategory::Absorption, 0.6), (UnitCategory::Extraction, 0.4)]).clone();
                self.separation(out, unit, Some("bin"), [Some("tout"), Some("bout")])
            }
            SubProcess::Filtration => {
                let unit = pick(self.rng, &[(UnitCategory::Filter, 0.7), (UnitCategory::Cyclone, 0.3)]).clone();
                self.separation(out, unit, None, [None, None])
            }
            SubProcess::Centrifugation => {
                let mut outlets = self.separation(out, UnitCategory::Centrifuge, None, [None, None]);
                if let Some(solids) = outlets.first_mut() {
                    if self.chance(0.4) {
                        self.attach(solids, UnitCategory::Dryer, None);
                    }
                }
                outlets
            }
            SubProcess::Purification => {
                self.purification(out);
                Vec::new()
            }
        }
    }

    fn reaction(&mut self, mut out: Outlet) -> Vec<Outlet> {
        // A recycle still pending from further upstream closes here.
        self.split_recycle(&mut out);
        let extra = self.chance(self.cfg.p_add_reactant);
        let extra_via_mixer = extra && self.chance(0.5);
        let recycle = self.chance(self.cfg.p_recycle);
        let mut mixer = None;
        if extra_via_mixer || recycle {
            let mix = self.attach(&mut out, UnitCategory::Mixer, None);
            if extra_via_mixer {
                self.feed_into(mix, None);
            }
            mixer = Some(mix);
        }
        self.pattern(&mut out, PatternSite::ReactionInlet);
        let hex = self.attach(&mut out, UnitCategory::Hex, None);
        let r = self.attach(&mut out, UnitCategory::Reactor, None);
        if extra && !extra_via_mixer {
            self.feed_into(r, None);
        }
        if self.chance(self.cfg.p_heat_integration) {
            self.heat_groups += 1;
            let group = self.heat_groups;
            self.g.nodes[hex].heat_group = Some(group);
            if self.chance(0.5) {
                let hex2 = self.attach(&mut out, UnitCategory::Hex, None);
                self.g.nodes[hex2].heat_group = Some(group);
            } else {
                let raw = self.unit(UnitCategory::Raw);
                let hex2 = self.unit(UnitCategory::Hex);
                let prod = self.unit(UnitCategory::Prod);
                self.g.nodes[hex2].heat_group = Some(group);
                self.link(raw, None, hex2, None);
                self.link(hex2, None, prod, None);
            }
        }
        self.pattern(&mut out, PatternSite::ReactionOutlet);
        out.recycle_to = mixer.filter(|_| recycle);
        if out.recycle_to.is_some() && self.chance(0.3) {
            self.split_recycle(&mut out);
        }
        out.depth += 1;
        vec![out]
    }

    fn separation(
        &mut self,
        mut out: Outlet,
        unit: UnitCategory,
        inlet_tag: Option<&'static str>,
        outlet_tags: [Option<&'static str>; 2],
    ) -> Vec<Outlet> {
        self.pattern(&mut out, PatternSite::SeparationInlet);
        let countercurrent = inlet_tag.is_some();
        let thermal = outlet_tags[0].is_some() && !countercurrent;
        // Columns may send part of an outlet back to a mixer at their inlet;
        // countercurrent columns instead return regenerated solvent to a
        // mixer on their fresh solvent feed.
        let mut recycle_mixer = None;
        if thermal && self.chance(self.cfg.p_recycle / 2.0) {
            recycle_mixer = Some(self.attach(&mut out, UnitCategory::Mixer, None));
        }
        let sep = self.attach(&mut out, unit, inlet_tag);
        if countercurrent {
            let mut solvent = self.feed();
            if self.chance(self.cfg.p_recycle) {
                recycle_mixer = Some(self.attach(&mut solvent, UnitCategory::Mixer, None));
            }
            self.link(solvent.node, solvent.tag, sep, Some("tin"));
        }
        let depth = out.depth + 1;
        let mut outlets: Vec<Outlet> = outlet_tags
            .iter()
            .map(|&tag| Outlet { node: sep, tag, recycle_to: None, depth })
            .collect();
        if let Some(mix) = out.recycle_to {
            let i = usize::from(self.chance(0.5));
            if self.chance(0.5) {
                let o = outlets.remove(i);
                self.link(sep, o.tag, mix, None);
            } else {
                outlets[i].recycle_to = Some(mix);
                self.split_recycle(&mut outlets[i]);
            }
        }
        if let Some(mix) = recycle_mixer {
            let i = outlets.iter().position(|o| o.tag == Some("bout")).unwrap_or(0);
            outlets[i].recycle_to = Some(mix);
        }
        outlets
    }

    fn purification(&mut self, mut out: Outlet) {
        self.split_recycle(&mut out);
        self.pattern(&mut out, PatternSite::Purification);
        self.attach(&mut out, UnitCategory::Prod, None);
    }

    fn run(&mut self) {
        let mut open = self.build();
        let next: Vec<(SubProcess, f64)> = self.cfg.next_subprocess.iter().map(|(k, v)| (*k, *v)).collect();
        while let Some(out) = open.pop() {
            let sp = if out.depth >= self.cfg.max_depth {
                SubProcess::Purification
            } else {
                *pick(self.rng, &next)
            };
            // Expanded outlets are processed depth first, in creation order.
            let mut more = self.expand(out, sp);
            more.reverse();
            open.extend(more);
        }
    }
}

/// Draws one flowsheet graph. Graphs with more than `max_nodes` units are
/// discarded and redrawn from the same generator state.
pub fn generate_flowsheet<R: Rng>(cfg: &GeneratorConfig, rng: &mut R) -> Result<FlowsheetGraph, SyngenError> {
    for _ in 0..MAX_RESAMPLES {
        let mut b = Builder { cfg, rng, g: FlowsheetGraph::new(), heat_groups: 0 };
        b.run();
        let g = b.g;
        if g.node_count() <= cfg.max_nodes {
            debug_assert!(validate(&g).is_empty(), "{:?}", validate(&g));
            return Ok(g);
        }
    }
    Err(SyngenError::ResampleLimitExceeded { attempts: MAX_RESAMPLES })
}
