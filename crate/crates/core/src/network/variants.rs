use super::{ArchOutputs, Architecture, Net, Node};
use crate::error::Result;

/// Three stride-2 blocks, each followed by a stride-1 refinement conv.
/// Returns the H/2, H/4 and H/8 feature maps.
fn encoder(net: &mut Net<'_>, x: Node) -> Result<[Node; 3]> {
    let w = net.config().base_width;
    let mut feats = Vec::with_capacity(3);
    let mut h = x;
    for (i, width) in [w, 2 * w, 4 * w].into_iter().enumerate() {
        h = net.conv_elu(&format!("encoder.block{}.down", i + 1), h, width, 3, 2, 1)?;
        h = net.conv_elu(&format!("encoder.block{}.conv", i + 1), h, width, 3, 1, 1)?;
        feats.push(h);
    }
    Ok([feats[0], feats[1], feats[2]])
}

fn context(net: &mut Net<'_>, x: Node) -> Result<Node> {
    let rates = net.config().usable_rates();
    let w = net.config().base_width;
    net.aspp("aspp", x, &rates, w)
}

/// 1x1 depth head at H/8 upsampled by 8.
fn coarse_head(net: &mut Net<'_>, x: Node) -> Result<ArchOutputs> {
    let raw = net.conv("head", x, 1, 1, 1, 1)?;
    let d = net.depth_activation(raw)?;
    let depth = net.upsample(d, 8)?;
    Ok(ArchOutputs {
        depth,
        final_pre: None,
        cues: None,
    })
}

/// Nearest x2 upsample, 3x3 conv, ELU.
fn upconv(net: &mut Net<'_>, name: &str, x: Node, cout: usize) -> Result<Node> {
    let up = net.upsample(x, 2)?;
    net.conv_elu(name, up, cout, 3, 1, 1)
}

/// Cue map scaled to unit range and resampled to the next stage.
fn route(net: &mut Net<'_>, cue: Node, factor: usize) -> Result<Node> {
    let kappa = net.kappa();
    let small = net.downsample(cue, factor)?;
    net.scale(small, 1.0 / kappa)
}

/// Upconv decoder from the ASPP output; LPG heads and cue routing when `lpg`.
fn decoder(net: &mut Net<'_>, skips: [Node; 3], ctx: Node, lpg: bool) -> Result<ArchOutputs> {
    let w = net.config().base_width;
    let kappa = net.kappa();
    let [e1, e2, _] = skips;

    let c8 = if lpg { Some(net.lpg("lpg8", ctx, 8)?) } else { None };
    let up2 = upconv(net, "decoder.up2", ctx, 2 * w)?;
    let mut inputs = vec![up2, e2];
    if let Some(c) = c8 {
        inputs.push(route(net, c, 4)?);
    }
    let cat = net.concat(&inputs)?;
    let d2 = net.conv_elu("decoder.iconv2", cat, 2 * w, 3, 1, 1)?;

    let c4 = if lpg { Some(net.lpg("lpg4", d2, 4)?) } else { None };
    let up1 = upconv(net, "decoder.up1", d2, w)?;
    let mut inputs = vec![up1, e1];
    if let Some(c) = c4 {
        inputs.push(route(net, c, 2)?);
    }
    let cat = net.concat(&inputs)?;
    let d1 = net.conv_elu("decoder.iconv1", cat, w, 3, 1, 1)?;

    let c2 = if lpg { Some(net.lpg("lpg2", d1, 2)?) } else { None };
    let up0 = upconv(net, "decoder.up0", d1, w / 2)?;
    let mut inputs = vec![up0];
    if let Some(c) = c2 {
        inputs.push(net.scale(c, 1.0 / kappa)?);
    }
    let cat = net.concat(&inputs)?;
    let d0 = net.conv_elu("decoder.iconv0", cat, w / 2, 3, 1, 1)?;

    let raw = net.conv("reduc1x1", d0, 1, 1, 1, 1)?;
    let c1 = net.depth_activation(raw)?;
    let cues = match (c8, c4, c2) {
        (Some(c8), Some(c4), Some(c2)) => Some([c8, c4, c2, c1]),
        _ => None,
    };
    let stack = match cues {
        Some([c8, c4, c2, c1]) => net.concat(&[c1, c2, c4, c8])?,
        None => c1,
    };
    let scaled = net.scale(stack, 1.0 / kappa)?;
    let pre = net.conv("final", scaled, 1, 3, 1, 1)?;
    let depth = net.depth_activation(pre)?;
    Ok(ArchOutputs {
        depth,
        final_pre: Some(pre),
        cues,
    })
}

/// Encoder with a direct depth head at H/8.
#[derive(Debug)]
pub struct Baseline;

impl Architecture for Baseline {
    fn name(&self) -> &'static str {
        "baseline"
    }

    fn build(&self, net: &mut Net<'_>, input: Node) -> Result<ArchOutputs> {
        let [_, _, e3] = encoder(net, input)?;
        coarse_head(net, e3)
    }
}

/// Baseline plus the ASPP block.
#[derive(Debug)]
pub struct Aspp;

impl Architecture for Aspp {
    fn name(&self) -> &'static str {
        "aspp"
    }

    fn build(&self, net: &mut Net<'_>, input: Node) -> Result<ArchOutputs> {
        let [_, _, e3] = encoder(net, input)?;
        let ctx = context(net, e3)?;
        coarse_head(net, ctx)
    }
}

/// ASPP plus the upconv decoder, without LPG heads.
#[derive(Debug)]
pub struct AsppUpconv;

impl Architecture for AsppUpconv {
    fn name(&self) -> &'static str {
        "aspp_upconv"
    }

    fn build(&self, net: &mut Net<'_>, input: Node) -> Result<ArchOutputs> {
        let skips = encoder(net, input)?;
        let ctx = context(net, skips[2])?;
        decoder(net, skips, ctx, false)
    }
}

/// The complete model: ASPP, upconv decoder, LPG heads at 8, 4, 2 and the
/// final combination of all four cues.
#[derive(Debug)]
pub struct Full;

impl Architecture for Full {
    fn name(&self) -> &'static str {
        "full"
    }

    fn build(&self, net: &mut Net<'_>, input: Node) -> Result<ArchOutputs> {
        let skips = encoder(net, input)?;
        let ctx = context(net, skips[2])?;
        decoder(net, skips, ctx, true)
    }
}
