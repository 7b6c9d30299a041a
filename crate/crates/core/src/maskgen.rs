//! Cross, spatial and temporal attention masks built from latent foreground
//! masks and a foreground labeling of the prompt tokens.
//!
//! Every family shares one kernel: entry `(i, j)` is 1 exactly when the two
//! foreground indicators agree. Masks are kept per frame (cross, spatial) or
//! per latent pixel (temporal) instead of one block-diagonal matrix over the
//! whole video.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::FrameMaskSet;

/// Dense row-major binary matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BinaryMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(BinaryMatrix { rows, cols, data })
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        BinaryMatrix { rows, cols, data: vec![true; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn is_all_ones(&self) -> bool {
        self.data.iter().all(|&b| b)
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn has_unit_diagonal(&self) -> bool {
        (0..self.rows.min(self.cols)).all(|i| self.get(i, i))
    }

    /// Indices of rows with no admissible entry.
    pub fn empty_rows(&self) -> Vec<usize> {
        (0..self.rows).filter(|&i| !self.row(i).iter().any(|&b| b)).collect()
    }
}

/// Foreground labels for the text tokens. Boundary tokens are background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLabels(Vec<bool>);

/// Start and end markers wrapped around every tokenized prompt.
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";

/// Lowercased alphanumeric words.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// `<bos>`, the prompt's words, `<eos>`.
pub fn tokenize(prompt: &str) -> Vec<String> {
    let mut tokens = vec![BOS_TOKEN.to_owned()];
    tokens.extend(words(prompt));
    tokens.push(EOS_TOKEN.to_owned());
    tokens
}

impl TokenLabels {
    pub fn new(labels: Vec<bool>) -> Result<Self> {
        if labels.is_empty() {
            return Err(invalid("token labels must not be empty"));
        }
        Ok(TokenLabels(labels))
    }

    /// Parse a string of `0`/`1` characters.
    pub fn parse(bits: &str) -> Result<Self> {
        let labels = bits
            .chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(invalid(format!("token label {other:?} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels)
    }

    /// Label the tokens of `prompt` that belong to an occurrence of `fg_phrase`.
    pub fn from_prompt(prompt: &str, fg_phrase: &str) -> Result<Self> {
        let tokens = tokenize(prompt);
        let phrase = words(fg_phrase);
        if phrase.is_empty() {
            return Err(invalid("foreground phrase has no words"));
        }
        let mut labels = vec![false; tokens.len()];
        let mut found = false;
        for start in 0..tokens.len().saturating_sub(phrase.len() - 1) {
            if tokens[start..start + phrase.len()] == phrase[..] {
                labels[start..start + phrase.len()].iter_mut().for_each(|l| *l = true);
                found = true;
            }
        }
        if !found {
            return Err(invalid(format!("phrase {fg_phrase:?} does not occur in {prompt:?}")));
        }
        Self::new(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn complement(&self) -> Self {
        TokenLabels(self.0.iter().map(|b| !b).collect())
    }
}

/// `out[i, j] = (row_fg[i] == col_fg[j])`.
pub fn xnor_mask(row_fg: &[bool], col_fg: &[bool]) -> BinaryMatrix {
    let data = row_fg
        .iter()
        .flat_map(|&r| col_fg.iter().map(move |&c| r == c))
        .collect();
    BinaryMatrix { rows: row_fg.len(), cols: col_fg.len(), data }
}

/// Pixel-to-token mask for one frame (`l_latents x l_text`).
pub fn build_cross_mask(frame_fg: &[bool], tokens: &TokenLabels) -> BinaryMatrix {
    xnor_mask(frame_fg, tokens.as_slice())
}

/// Pixel-to-pixel mask within one frame (`l_latents x l_latents`).
pub fn build_spatial_mask(frame_fg: &[bool]) -> BinaryMatrix {
    xnor_mask(frame_fg, frame_fg)
}

/// Frame-to-frame mask for one latent pixel (`l_video x l_video`).
pub fn build_temporal_mask(pixel_fg: &[bool]) -> BinaryMatrix {
    xnor_mask(pixel_fg, pixel_fg)
}

/// Which mask families are applied. A disabled family is all-ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub cross: bool,
    pub spatial: bool,
    pub temporal: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::ALL_ON
    }
}

impl AblationFlags {
    pub const ALL_ON: Self = AblationFlags { cross: true, spatial: true, temporal: true };
    pub const ALL_OFF: Self = AblationFlags { cross: false, spatial: false, temporal: false };

    pub fn enabled(&self, family: MaskFamily) -> bool {
        match family {
            MaskFamily::Cross => self.cross,
            MaskFamily::Spatial => self.spatial,
            MaskFamily::Temporal => self.temporal,
        }
    }

    pub fn without(mut self, family: MaskFamily) -> Self {
        match family {
            MaskFamily::Cross => self.cross = false,
            MaskFamily::Spatial => self.spatial = false,
            MaskFamily::Temporal => self.temporal = false,
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskFamily {
    Cross,
    Spatial,
    Temporal,
}

impl MaskFamily {
    pub const ALL: [MaskFamily; 3] = [MaskFamily::Cross, MaskFamily::Spatial, MaskFamily::Temporal];

    pub fn tag(self) -> u8 {
        match self {
            MaskFamily::Cross => 0,
            MaskFamily::Spatial => 1,
            MaskFamily::Temporal => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(MaskFamily::Cross),
            1 => Some(MaskFamily::Spatial),
            2 => Some(MaskFamily::Temporal),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskFamily::Cross => "cross",
            MaskFamily::Spatial => "spatial",
            MaskFamily::Temporal => "temporal",
        }
    }
}

/// All three mask families for one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMaskBundle {
    /// One `l_latents x l_text` matrix per frame.
    pub cross: Vec<BinaryMatrix>,
    /// One `l_latents x l_latents` matrix per frame.
    pub spatial: Vec<BinaryMatrix>,
    /// One `l_video x l_video` matrix per latent pixel.
    pub temporal: Vec<BinaryMatrix>,
    pub ablation: AblationFlags,
    /// `(frame, pixel)` pairs whose cross-mask row admits no token. Happens
    /// only when every token carries the opposite label of the pixel.
    pub empty_cross_rows: Vec<(usize, usize)>,
}

impl AttentionMaskBundle {
    /// A bundle that masks nothing.
    pub fn all_ones(num_frames: usize, l_latents: usize, l_text: usize) -> Self {
        AttentionMaskBundle {
            cross: vec![BinaryMatrix::ones(l_latents, l_text); num_frames],
            spatial: vec![BinaryMatrix::ones(l_latents, l_latents); num_frames],
            temporal: vec![BinaryMatrix::ones(num_frames, num_frames); l_latents],
            ablation: AblationFlags::ALL_OFF,
            empty_cross_rows: Vec::new(),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.cross.len()
    }

    pub fn l_latents(&self) -> usize {
        self.temporal.len()
    }

    pub fn l_text(&self) -> usize {
        self.cross.first().map_or(0, BinaryMatrix::cols)
    }

    pub fn family(&self, family: MaskFamily) -> &[BinaryMatrix] {
        match family {
            MaskFamily::Cross => &self.cross,
            MaskFamily::Spatial => &self.spatial,
            MaskFamily::Temporal => &self.temporal,
        }
    }
}

/// Assemble the bundle for a whole video.
pub fn build_bundle(masks: &FrameMaskSet, tokens: &TokenLabels, ablation: AblationFlags) -> AttentionMaskBundle {
    let frames = masks.num_frames();
    let l = masks.l_latents();
    let cross: Vec<BinaryMatrix> = if ablation.cross {
        masks.frames().iter().map(|fg| build_cross_mask(fg, tokens)).collect()
    } else {
        vec![BinaryMatrix::ones(l, tokens.len()); frames]
    };
    let spatial = if ablation.spatial {
        masks.frames().iter().map(|fg| build_spatial_mask(fg)).collect()
    } else {
        vec![BinaryMatrix::ones(l, l); frames]
    };
    let temporal = if ablation.temporal {
        (0..l).map(|i| build_temporal_mask(&masks.pixel_series(i))).collect()
    } else {
        vec![BinaryMatrix::ones(frames, frames); l]
    };
    let empty_cross_rows = cross
        .iter()
        .enumerate()
        .flat_map(|(f, m)| m.empty_rows().into_iter().map(move |i| (f, i)))
        .collect();
    AttentionMaskBundle { cross, spatial, temporal, ablation, empty_cross_rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LatentGrid;
    use proptest::prelude::*;

    fn m(rows: &[&[u8]]) -> BinaryMatrix {
        let cols = rows[0].len();
        BinaryMatrix::new(rows.len(), cols, rows.iter().flat_map(|r| r.iter().map(|&v| v == 1)).collect())
            .unwrap()
    }

    fn bits(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&b| b == 1).collect()
    }

    #[test]
    fn cross_mask_example() {
        let t = TokenLabels::new(bits(&[1, 0, 0])).unwrap();
        assert_eq!(build_cross_mask(&bits(&[1, 0]), &t), m(&[&[1, 0, 0], &[0, 1, 1]]));
    }

    #[test]
    fn cross_mask_all_foreground() {
        let t = TokenLabels::new(vec![true; 4]).unwrap();
        assert!(build_cross_mask(&[true; 5], &t).is_all_ones());
    }

    #[test]
    fn spatial_mask_two_cliques() {
        let s = build_spatial_mask(&bits(&[1, 0, 1, 0]));
        assert_eq!(s, m(&[&[1, 0, 1, 0], &[0, 1, 0, 1], &[1, 0, 1, 0], &[0, 1, 0, 1]]));
        assert!(build_spatial_mask(&[false; 6]).is_all_ones());
    }

    #[test]
    fn temporal_mask_example() {
        let t = build_temporal_mask(&bits(&[1, 1, 0]));
        assert_eq!(t, m(&[&[1, 1, 0], &[1, 1, 0], &[0, 0, 1]]));
        assert!(build_temporal_mask(&[true; 4]).is_all_ones());
    }

    #[test]
    fn token_labels_from_prompt() {
        let t = TokenLabels::from_prompt("A red double-decker bus moving through London streets.", "double-decker bus")
            .unwrap();
        // <bos> a red double decker bus moving through london streets <eos>
        assert_eq!(t.len(), 11);
        assert_eq!(
            t.as_slice(),
            bits(&[0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0]).as_slice()
        );
        assert!(TokenLabels::from_prompt("A fox.", "wolf").is_err());
        assert!(TokenLabels::from_prompt("A fox.", "  ").is_err());
    }

    #[test]
    fn token_labels_parse() {
        assert_eq!(TokenLabels::parse("0110").unwrap().as_slice(), bits(&[0, 1, 1, 0]).as_slice());
        assert!(TokenLabels::parse("012").is_err());
        assert!(TokenLabels::parse("").is_err());
    }

    fn two_by_two_three_frames() -> FrameMaskSet {
        FrameMaskSet::new(
            LatentGrid::new(2, 2).unwrap(),
            vec![bits(&[1, 0, 0, 0]), bits(&[1, 1, 0, 0]), bits(&[0, 1, 0, 1])],
        )
        .unwrap()
    }

    #[test]
    fn bundle_on_small_video() {
        let masks = two_by_two_three_frames();
        let tokens = TokenLabels::new(bits(&[0, 1, 0])).unwrap();
        let b = build_bundle(&masks, &tokens, AblationFlags::ALL_ON);
        assert_eq!((b.cross.len(), b.spatial.len(), b.temporal.len()), (3, 3, 4));
        for (f, s) in b.spatial.iter().enumerate() {
            let fg = masks.frame(f);
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(s.get(i, j), fg[i] == fg[j]);
                }
            }
        }
        // Pixel 0 is fg in frames 0 and 1 only.
        assert_eq!(b.temporal[0], m(&[&[1, 1, 0], &[1, 1, 0], &[0, 0, 1]]));
        assert!(b.empty_cross_rows.is_empty());
    }

    #[test]
    fn ablations_off_give_all_ones() {
        let masks = two_by_two_three_frames();
        let tokens = TokenLabels::new(bits(&[0, 1, 0])).unwrap();
        let b = build_bundle(&masks, &tokens, AblationFlags::ALL_OFF);
        assert!(MaskFamily::ALL.iter().all(|&fam| b.family(fam).iter().all(BinaryMatrix::is_all_ones)));
        assert_eq!(b, AttentionMaskBundle { ablation: AblationFlags::ALL_OFF, ..AttentionMaskBundle::all_ones(3, 4, 3) });
    }

    #[test]
    fn single_label_tokens_report_empty_rows() {
        let masks = two_by_two_three_frames();
        let tokens = TokenLabels::new(vec![true; 3]).unwrap();
        let b = build_bundle(&masks, &tokens, AblationFlags::ALL_ON);
        let bg_cells: usize = (0..3).map(|f| 4 - masks.fg_count(f)).sum();
        assert_eq!(b.empty_cross_rows.len(), bg_cells);
        assert!(b.empty_cross_rows.contains(&(0, 1)));
    }

    fn arb_bits(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<bool>> {
        proptest::collection::vec(any::<bool>(), n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn complement_invariance(fg in arb_bits(1..24), tok in arb_bits(1..12)) {
            let t = TokenLabels::new(tok).unwrap();
            let flipped: Vec<bool> = fg.iter().map(|b| !b).collect();
            prop_assert_eq!(build_cross_mask(&fg, &t), build_cross_mask(&flipped, &t.complement()));
            prop_assert_eq!(build_spatial_mask(&fg), build_spatial_mask(&flipped));
        }

        #[test]
        fn spatial_equals_outer_product_sum(fg in arb_bits(16..17)) {
            let s = build_spatial_mask(&fg);
            let x: Vec<u8> = fg.iter().map(|&b| b as u8).collect();
            for i in 0..16 {
                for j in 0..16 {
                    let v = x[i] * x[j] + (1 - x[i]) * (1 - x[j]);
                    prop_assert_eq!(s.get(i, j), v == 1);
                }
            }
            prop_assert!(s.is_symmetric() && s.has_unit_diagonal());
        }

        #[test]
        fn temporal_and_spatial_share_kernel(series in arb_bits(1..20)) {
            prop_assert_eq!(build_temporal_mask(&series), build_spatial_mask(&series));
        }

        #[test]
        fn background_row_complements_foreground_row(fg in arb_bits(2..20), tok in arb_bits(1..10)) {
            prop_assume!(fg.iter().any(|&b| b) && fg.iter().any(|&b| !b));
            let t = TokenLabels::new(tok).unwrap();
            let c = build_cross_mask(&fg, &t);
            let i_fg = fg.iter().position(|&b| b).unwrap();
            let i_bg = fg.iter().position(|&b| !b).unwrap();
            for j in 0..t.len() {
                prop_assert_eq!(c.get(i_bg, j), !c.get(i_fg, j));
            }
        }
    }
}
