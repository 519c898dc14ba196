#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "avbr/manifest.hpp"
#include "avbr/media.hpp"
#include "avbr/taxonomy.hpp"

namespace avbr {

// ---- prompt assembly ------------------------------------------------------------

struct PromptTemplate {
    std::string task_description;
    std::string answer_format_instruction;
    std::string reformat_instruction;  // step-2 prefix; the step-1 answer is appended
    std::string posthoc_instruction;   // explanation request given ground truth
    std::string adhoc_instruction;     // explanation request without ground truth
    bool include_category_block = true;

    std::string to_json() const;
    static PromptTemplate from_json(const std::string& text);
};

PromptTemplate default_prompt_template();
PromptTemplate load_prompt_template(const std::string& path);

// The canonical names with their descriptions, one "- name: description" line each.
std::string category_block();

struct PromptBundle {
    std::string base;               // P
    std::string audio_caption;      // AC ("" = absent)
    std::string speech_transcript;  // ST ("" = absent)
    std::string augmented;          // P' = P (+ AC line) (+ ST line)
    std::string ground_truth_block; // "" except for the post-hoc path
};

// Deterministic text assembly; empty AC/ST sections are omitted entirely.
PromptBundle build_prompt(const PromptTemplate& tmpl, const std::string& audio_caption,
                          const std::string& speech_transcript);

// Ground-truth block sentence for the post-hoc prompt.
std::string ground_truth_block(const LabelMask& labels);

// ---- clients ----------------------------------------------------------------------

class MllmClient {
public:
    virtual ~MllmClient() = default;
    virtual std::string name() const = 0;
    // image == nullptr for text-only requests. Throws TransportError on
    // transport failure; refusal text is a normal response.
    virtual std::string send(const Image* image, const std::string& text) = 0;
};

// Deterministic mock. Step-1 requests (with image) yield prose derived from a
// hash of (image digest, text), or a scripted response registered per image
// digest. Step-2 requests (no image) canonicalize the embedded answer with a
// small synonym lexicon.
class MockMllmClient : public MllmClient {
public:
    std::string name() const override { return "mock"; }
    std::string send(const Image* image, const std::string& text) override;

    // Scripted step-1 response for a given composite image digest.
    void script(const std::string& image_digest, const std::string& response);

private:
    std::map<std::string, std::string> scripted_;
};

// Echoes the prompt back with a fixed prefix; used for the post-hoc path where
// the response must contain the ground-truth block verbatim.
class EchoMllmClient : public MllmClient {
public:
    std::string name() const override { return "mock-echo"; }
    std::string send(const Image* image, const std::string& text) override;
};

// Cache + retry wrapper. Requests are keyed by sha256(image bytes + text);
// retries: 3 attempts with exponential backoff.
class CachingMllmClient : public MllmClient {
public:
    explicit CachingMllmClient(MllmClient& inner, std::string disk_dir = "",
                               int attempts = 3, int backoff_ms = 100);
    std::string name() const override { return inner_.name() + "+cache"; }
    std::string send(const Image* image, const std::string& text) override;

    int underlying_calls() const { return calls_; }

private:
    MllmClient& inner_;
    std::string disk_dir_;
    int attempts_;
    int backoff_ms_;
    int calls_ = 0;
    std::map<std::string, std::string> cache_;
    std::mutex mutex_;
};

// OpenAI-style HTTP adapter (optional real path; never required by tests).
struct HttpClientConfig {
    std::string endpoint;          // e.g. "http://host:port/v1/chat/completions"
    std::string model;
    std::string token_env = "AVBR_API_TOKEN";
    double temperature = 0.0;
    int timeout_s = 60;
};
std::unique_ptr<MllmClient> make_http_client(const HttpClientConfig& config);

// Request digest used for caching and scripting.
std::string request_digest(const Image* image, const std::string& text);

// ---- inference --------------------------------------------------------------------

struct TwoStepResult {
    std::string free_text;   // step-1 answer
    std::string label_line;  // step-2 reformatted answer
};

// Step 1 sends (image, P'); step 2 sends text-only reformat request to the
// (possibly different) step-2 client. Refusals flow through unchanged.
TwoStepResult two_step_infer(MllmClient& step1, MllmClient& step2, const Image& image,
                             const PromptBundle& bundle, const PromptTemplate& tmpl);

// Case-insensitive canonical-substring matching after whitespace
// normalization; "none of the above" / "no autism-related behaviors" map to
// Background.
LabelMask extract_labels(std::string_view text);

// ---- sidecar (AC / ST) ---------------------------------------------------------------

struct SidecarEntry {
    std::string audio_caption;
    std::string speech_transcript;
};

using Sidecar = std::map<std::string, SidecarEntry>;

Sidecar load_sidecar(const std::string& path);
void save_sidecar(const Sidecar& sidecar, const std::string& path);
// Deterministic innocuous captions/transcripts containing no canonical names.
Sidecar synthetic_sidecar(const DatasetManifest& manifest, uint64_t seed);

// ---- instruction data -----------------------------------------------------------------

struct InstructionPair {
    std::string clip_id;
    std::string image_path;  // composite image reference
    std::string prompt;      // P'
    std::string target;      // comma-joined canonical labels, taxonomy id order
};

struct PostHocRecord {
    std::string clip_id;
    std::string image_path;
    std::string audio_caption;
    std::string speech_transcript;
    std::string instruction;         // P_inst
    std::string ground_truth_block;  // full L_gt sentence
    std::string prompt;              // assembled post-hoc request text
    std::string reasoning;           // model response
};

struct AdHocPair {
    std::string clip_id;
    std::string image_path;
    std::string prompt;  // assembled without any ground-truth content
    std::string target;  // reasoning bytes, unchanged
};

struct SkipRecord {
    std::string clip_id;
    std::string reason;
};

// Resolves each clip's composite image path; empty return = recorded skip.
using ImagePathResolver = std::function<std::string(const ClipRecord&)>;

struct InstructionBuildResult {
    std::vector<InstructionPair> pairs;
    std::vector<SkipRecord> skipped;
};

InstructionBuildResult build_instruction_pairs(const DatasetManifest& manifest, Split split,
                                               const PromptTemplate& tmpl,
                                               const Sidecar& sidecar,
                                               const ImagePathResolver& image_path);

struct PostHocBuildResult {
    std::vector<PostHocRecord> records;
    std::vector<SkipRecord> skipped;
};

// Post-hoc prompt: instruction + AC/ST lines + ground-truth block; the full
// request and response are persisted per record.
PostHocBuildResult generate_posthoc(MllmClient& client, const DatasetManifest& manifest,
                                    Split split, const PromptTemplate& tmpl,
                                    const Sidecar& sidecar,
                                    const ImagePathResolver& image_path,
                                    const std::function<const Image*(const ClipRecord&)>&
                                        image_for = nullptr);

struct AdHocBuildResult {
    std::vector<AdHocPair> pairs;
    std::vector<SkipRecord> skipped;
};

// Rebuilds each input with the ad-hoc instruction and no ground-truth block;
// targets are the post-hoc reasoning bytes unchanged.
AdHocBuildResult build_adhoc_pairs(const std::vector<PostHocRecord>& records,
                                   const PromptTemplate& tmpl);

// ---- conversation-format files ----------------------------------------------------------

// {"id", "image", "conversations": [{"from": "human", ...}, {"from": "model", ...}]}
std::string conversation_jsonl(const std::vector<InstructionPair>& pairs);
std::string conversation_jsonl(const std::vector<AdHocPair>& pairs);
std::string posthoc_jsonl(const std::vector<PostHocRecord>& records);
std::vector<PostHocRecord> load_posthoc_jsonl(const std::string& path);

// Fine-tuning recipe emitted next to instruction files (documented hook; no
// training is executed here).
std::string finetune_recipe_json();

}  // namespace avbr
