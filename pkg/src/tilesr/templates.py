"""Caption-request text sent to the vision-chat extractor.

The tile templates are fixed strings: downstream tests and manifests depend
on them byte-for-byte, so edit them only with a matching fixture update.
"""

IMAGE_TILE_USER_PROMPT = """The second image is a low-resolution crop (bicubic upsample) of the first image.
It may appear blurry due to upsampling, but you must ignore the blur.
Compare both and describe the content of the SECOND image (the patch) with extreme detail.
1. Intentional Texture: Based on the object's identity, what is its actual material?
2. Micro-OCR: Transcribe any letters, numbers, or symbols that are unique to this patch.
3. Edge & Shape: Describe the intended sharp edges and structures of the objects in the patch.
STRICT RULE: NEVER use words like 'blurry', 'pixelated', 'noisy', 'low-res', or 'distorted'.
Output ONLY the inferred high-quality keywords, separated by commas."""

VIDEO_TILE_USER_PROMPT = """The second video is a low-resolution crop (bicubic upsampled) of the first video.
It may appear blurry due to upsampling, but you must ignore the blur.
Compare both and describe the content of the SECOND video (the patch) with extreme detail:
1. Intentional Texture: Based on the object's identity, what is its actual material?
2. Micro-OCR: Transcribe any letters, numbers, or symbols that are unique to this patch.
3. Edge & Shape: Describe the intended sharp edges and structures of the objects in the patch.
STRICT RULE: NEVER use words like 'blurry', 'pixelated', 'noisy', 'low-res', or 'distorted'.
Output ONLY the inferred high-quality keywords, separated by commas."""

IMAGE_GLOBAL_USER_PROMPT = """The image is a low-resolution input that may appear blurry; ignore the blur.
Describe its content with extreme detail: materials, readable text, and the sharp edges and structures of the objects.
Output ONLY the inferred high-quality keywords, separated by commas."""

VIDEO_GLOBAL_USER_PROMPT = """The video is a low-resolution input that may appear blurry; ignore the blur.
Describe its content with extreme detail: materials, motion, readable text, and the sharp edges and structures of the objects.
Output ONLY the inferred high-quality keywords, separated by commas."""

SYSTEM_PROMPT = (
    "You are a meticulous visual analyst for a super-resolution engine. "
    "You infer the true high-quality appearance of the content you are shown "
    "and answer only with descriptive keywords."
)
