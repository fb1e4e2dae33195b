//! Fixed prompt texts: the evolution-operator instruction, the chat template
//! used for supervised fine-tuning records, and the negative-prompt texts.
//!
//! These strings are part of the emitted data formats. Changing a byte here
//! changes golden files and cache keys.

/// Instruction block handed to the LLM evolution operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperatorTemplate {
    pub id: &'static str,
    /// Text before the few-shot exemplars.
    pub preamble: &'static str,
    pub exemplars: &'static [&'static str],
    /// Text after the exemplars. `{n}` is replaced by the offspring count.
    pub instructions: &'static str,
}

impl OperatorTemplate {
    pub fn system_text(&self, offspring: usize) -> String {
        let mut out = String::from(self.preamble);
        for ex in self.exemplars {
            out.push('\n');
            out.push_str(ex);
        }
        out.push_str("\n...\n\n");
        out.push_str(&self.instructions.replace("{n}", &offspring.to_string()));
        out
    }
}

pub const EVOLUTION_V1: OperatorTemplate = OperatorTemplate {
    id: "evolution-v1",
    preamble: "You need to refine user's input prompt. The user's input prompt is used for video generation task. You need to refine the user's prompt to make it more suitable for the task. Here are some examples of refined prompts:",
    exemplars: &[
        "a close-up shot of a woman standing in a room with a white wall and a plant on the left side. the woman has curly hair and is wearing a green tank top. she is looking to the side with a neutral expression on her face. the lighting in the room is soft and appears to be natural, coming from the left side of the frame. the focus is on the woman, with the background being out of focus. there are no texts or other objects in the video. the style of the video is a simple, candid portrait with a shallow depth of field.",
        "a serene scene of a pond filled with water lilies. the water is a deep blue, providing a striking contrast to the pink and white flowers that float on its surface. the flowers, in full bloom, are the main focus of the video. they are scattered across the pond, with some closer to the camera and others further away, creating a sense of depth. the pond is surrounded by lush greenery, adding a touch of nature to the scene. the video is taken from a low angle, looking up at the flowers, which gives a unique perspective and emphasizes their beauty. the overall composition of the video suggests a peaceful and tranquil setting, likely a garden or a park.",
        "a serene scene in a park. the sun is shining brightly, casting a warm glow on the lush green trees and the grassy field. the camera is positioned low, looking up at the towering trees, which are the main focus of the image. the trees are dense and full of leaves, creating a canopy of green that fills the frame. the sunlight filters through the leaves, creating a beautiful pattern of light and shadow on the ground. the overall atmosphere of the video is peaceful and tranquil, evoking a sense of calm and relaxation.",
        "a scene where a person is examining a dog. the person is wearing a blue shirt with the word \"volunteer\" printed on it. the dog is lying on its side, and the person is using a stethoscope to listen to the dog's heartbeat. the dog appears to be a golden retriever and is looking directly at the camera. the background is blurred, but it seems to be an indoor setting with a white wall. the person's focus is on the dog, and they seem to be checking its health. the dog's expression is calm, and it seems to be comfortable with the person's touch. the overall atmosphere of the video is calm and professional.",
    ],
    instructions: "The refined prompt should pay attention to all objects in the video. The description should be useful for AI to re-generate the video. The description should be no more than six sentences. The refined prompt should be in English.\n\
User will provide an original prompt and your revised prompts, with their generated videos' scores (Visual Quality, Temporal Consistency, Dynamic Degree, Text Video Alignment, Factual Consistency, Aesthetic score, Image quality, 7 dimensions termed as VQ, TC, DD, TVA, FC, AES, MPS), and you need to give an improved prompt according to previous prompts and their scores on different dimensions.\n\
Each prompt is tagged with an index, and the sentence labeled as 0 is the initial prompt. Each prompt is followed by (VQ, TC, DD, TVA, FC, AES, MPS) scores. You need build upon the most successful prompts and learn from the high-scoring prompts. You need to observe the scores of each prompt in different aspects, learn from the experiences of previous prompts, and combine their strengths to generate better prompts.\n\
The new prompts should keep the same semantic meaning with original prompt, should not add extra scene changing or too many actions, which is hard for video generation.\n\
Generate {n} paraphrases of the initial prompt which keep the semantic meaning and that have higher scores than all the prompts above. Respond with each new prompt in between <PROMPT> and </PROMPT>, e.g., <PROMPT>paraphrase 1</PROMPT>.",
};

pub fn operator_template(id: &str) -> Option<&'static OperatorTemplate> {
    [&EVOLUTION_V1].into_iter().find(|t| t.id == id)
}

/// User-turn wrapper for a two-turn chat record: `prefix + input + suffix`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DialogTemplate {
    pub id: &'static str,
    pub prefix: &'static str,
    pub suffix: &'static str,
}

impl DialogTemplate {
    pub fn render(&self, input: &str) -> String {
        let mut out = String::with_capacity(self.prefix.len() + input.len() + self.suffix.len());
        out.push_str(self.prefix);
        out.push_str(input);
        out.push_str(self.suffix);
        out
    }

    /// Recovers the input from rendered user content.
    pub fn parse<'a>(&self, content: &'a str) -> Option<&'a str> {
        content.strip_prefix(self.prefix)?.strip_suffix(self.suffix)
    }
}

/// Prompt-refinement instruction used for SFT records and for sampling
/// candidates from the fine-tuned model.
pub const REFINE_V1: DialogTemplate = DialogTemplate {
    id: "refine-v1",
    prefix: "You need to refine user's input prompt. The user's input prompt is used for video generation task. You need to refine the user's prompt to make it more suitable for the task. You will be prompted by people looking to create detailed, amazing videos. The way to accomplish this is to take their short prompts and make them extremely detailed and descriptive. You will only ever output a single video description per user request. You should refactor the entire description to integrate the suggestions. Original prompt:\n",
    suffix: "\n New prompt:\n",
};

/// Wrapper for (positive → negative) training records.
pub const NEGATIVE_V1: DialogTemplate = DialogTemplate {
    id: "negative-v1",
    prefix: "Write a negative prompt for the following video description. Use comma-separated descriptors of unwanted visual attributes and do not restate the subject. Video description:\n",
    suffix: "\n Negative prompt:\n",
};

pub fn dialog_template(id: &str) -> Option<&'static DialogTemplate> {
    [&REFINE_V1, &NEGATIVE_V1].into_iter().find(|t| t.id == id)
}

/// Global negative prompt applied to every generation.
pub const FIXED_NEGATIVE_PROMPT: &str = "The video is not of a high quality, it has a low resolution, and the audio quality is not clear. Strange motion trajectory, a poor composition and deformed video, low resolution, duplicate and ugly, strange body structure, long and strange neck, bad teeth, bad eyes, bad limbs, bad hands, rotating camera, blurry camera, shaking camera. Deformation, low-resolution, blurry, ugly, distortion.";

/// System turn for few-shot negative-prompt generation.
pub const NEGATIVE_ICL_SYSTEM: &str = "You write negative prompts for a text-to-video model. Given a refined video description, list the visual defects the video must avoid: antonyms of its positive modifiers and generic quality problems. Answer with comma-separated descriptors only. Do not restate the subject, the scene or the actions of the description.";

/// Default (refined prompt, negative prompt) few-shot pairs.
pub const NEGATIVE_EXEMPLARS: &[(&str, &str)] = &[
    (
        "A red fox trots across a snowy meadow at dawn. Its thick fur glows in the soft golden light, and its breath forms small clouds in the cold air. The camera follows at a steady distance, keeping the fox sharp against a gently blurred forest.",
        "low quality, low resolution, harsh lighting, dull colors, flat grey sky, jerky camera, shaky framing, motion blur, deformed legs, extra limbs, missing tail, matted fur, distorted face, watermark, text, oversaturated snow",
    ),
    (
        "A chef slices fresh vegetables on a wooden board in a bright kitchen. Colorful peppers and green herbs are neatly arranged nearby. Warm sunlight falls through the window, and the knife moves in smooth, precise strokes.",
        "low quality, blurry, dim lighting, cold color cast, cluttered background, bad hands, missing fingers, extra fingers, warped knife, melting vegetables, flickering, stuttering motion, rotating camera, watermark, text, ugly composition",
    ),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dialog_roundtrip() {
        let s = "Attractive blonde woman doing hand massage in a spa center";
        let rendered = REFINE_V1.render(s);
        assert!(rendered.ends_with("Original prompt:\nAttractive blonde woman doing hand massage in a spa center\n New prompt:\n"));
        assert_eq!(REFINE_V1.parse(&rendered), Some(s));
        assert_eq!(REFINE_V1.parse("something else"), None);
    }

    #[test]
    fn operator_text_has_count() {
        let text = EVOLUTION_V1.system_text(3);
        assert!(text.contains("Generate 3 paraphrases"));
        assert!(!text.contains("{n}"));
        assert_eq!(operator_template("evolution-v1"), Some(&EVOLUTION_V1));
        assert!(operator_template("nope").is_none());
    }
}
