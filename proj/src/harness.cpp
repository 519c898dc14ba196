#include "avbr/harness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include "avbr/digest.hpp"
#include "avbr/errors.hpp"
#include "avbr/rng.hpp"
#include "httplib.h"
#include "json.hpp"

namespace avbr {

using nlohmann::ordered_json;

// ---- prompt assembly --------------------------------------------------------------

std::string category_block() {
    std::string out;
    for (const auto& cat : taxonomy()) {
        out += "- ";
        out += cat.name;
        out += ": ";
        out += cat.description;
        out += "\n";
    }
    return out;
}

PromptTemplate default_prompt_template() {
    PromptTemplate t;
    t.task_description =
        "The attached image is a three-by-three grid of nine frames sampled evenly from a "
        "short video clip, ordered left to right, top to bottom. Review the clip carefully "
        "for autism-related behaviors shown by the child.";
    t.answer_format_instruction =
        "Describe what you observe, then name every behavior from the list that is present "
        "in the clip, using the exact names from the list. If none of the listed behaviors "
        "are present, answer 'None of the above.'";
    t.reformat_instruction =
        "Rewrite the answer below as a comma-separated list of behavior names, using only "
        "these exact names: " +
        [] {
            std::string names;
            for (const auto& cat : taxonomy()) {
                if (!names.empty()) names += ", ";
                names += cat.name;
            }
            return names;
        }() +
        ". If the answer says none of the listed behaviors are present, reply 'None of the "
        "above.'. If the answer refuses or does not address the question, reply 'Unable to "
        "determine.'.\nAnswer:";
    t.posthoc_instruction =
        "The attached image is a three-by-three grid of nine frames sampled evenly from a "
        "short video clip, ordered left to right, top to bottom.";
    t.adhoc_instruction =
        "The attached image is a three-by-three grid of nine frames sampled evenly from a "
        "short video clip, ordered left to right, top to bottom. Identify the "
        "autism-related behaviors present in the clip and explain the observable evidence "
        "for each.";
    return t;
}

std::string PromptTemplate::to_json() const {
    ordered_json obj;
    obj["task_description"] = task_description;
    obj["answer_format_instruction"] = answer_format_instruction;
    obj["reformat_instruction"] = reformat_instruction;
    obj["posthoc_instruction"] = posthoc_instruction;
    obj["adhoc_instruction"] = adhoc_instruction;
    obj["include_category_block"] = include_category_block;
    return obj.dump(2) + "\n";
}

PromptTemplate PromptTemplate::from_json(const std::string& text) {
    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("prompt template: ") + e.what());
    }
    PromptTemplate t = default_prompt_template();
    if (obj.contains("task_description")) t.task_description = obj["task_description"];
    if (obj.contains("answer_format_instruction")) {
        t.answer_format_instruction = obj["answer_format_instruction"];
    }
    if (obj.contains("reformat_instruction")) t.reformat_instruction = obj["reformat_instruction"];
    if (obj.contains("posthoc_instruction")) t.posthoc_instruction = obj["posthoc_instruction"];
    if (obj.contains("adhoc_instruction")) t.adhoc_instruction = obj["adhoc_instruction"];
    if (obj.contains("include_category_block")) {
        t.include_category_block = obj["include_category_block"];
    }
    return t;
}

PromptTemplate load_prompt_template(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open prompt template " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return PromptTemplate::from_json(ss.str());
}

namespace {

std::string ac_st_suffix(const std::string& ac, const std::string& st) {
    std::string out;
    if (!ac.empty()) out += "\nAudio caption: " + ac;
    if (!st.empty()) out += "\nSpeech transcription: " + st;
    return out;
}

}  // namespace

PromptBundle build_prompt(const PromptTemplate& tmpl, const std::string& audio_caption,
                          const std::string& speech_transcript) {
    PromptBundle b;
    b.base = tmpl.task_description;
    if (tmpl.include_category_block) {
        b.base += "\n\nBehavior list:\n" + category_block();
    }
    b.base += "\n" + tmpl.answer_format_instruction;
    b.audio_caption = audio_caption;
    b.speech_transcript = speech_transcript;
    b.augmented = b.base + ac_st_suffix(audio_caption, speech_transcript);
    return b;
}

std::string ground_truth_block(const LabelMask& labels) {
    return "The behaviors present are: " + labels.joined() +
           ". Explain the evidence for each.";
}

// ---- label extraction ----------------------------------------------------------------

namespace {

std::string normalize_ws_lower(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool in_ws = false;
    for (char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isspace(c)) {
            in_ws = true;
            continue;
        }
        if (in_ws && !out.empty()) out += ' ';
        in_ws = false;
        out += static_cast<char>(std::tolower(c));
    }
    return out;
}

}  // namespace

LabelMask extract_labels(std::string_view text) {
    const std::string haystack = normalize_ws_lower(text);
    LabelMask out;
    for (const auto& cat : taxonomy()) {
        const std::string needle = normalize_ws_lower(cat.name);
        if (haystack.find(needle) != std::string::npos) out.add(cat.id);
    }
    for (const char* synonym : {"none of the above", "no autism-related behaviors"}) {
        if (haystack.find(synonym) != std::string::npos) out.add(kBackgroundId);
    }
    return out;
}

// ---- mock clients ----------------------------------------------------------------------

namespace {

// phrase -> category id; scanned on normalized lowercase text
const std::vector<std::pair<std::string_view, int>>& reformat_lexicon() {
    static const std::vector<std::pair<std::string_view, int>> lex = {
        {"absence or avoidance of eye contact", 0},
        {"avoids eye contact", 0},
        {"avoiding eye contact", 0},
        {"eye contact avoidance", 0},
        {"no eye contact", 0},
        {"non-responsiveness to verbal interaction", 1},
        {"does not respond", 1},
        {"doesn't respond", 1},
        {"not responding", 1},
        {"unresponsive", 1},
        {"non-typical language", 2},
        {"echolalia", 2},
        {"repeats words", 2},
        {"repeating words", 2},
        {"idiosyncratic language", 2},
        {"aggressive behavior", 3},
        {"aggression", 3},
        {"hitting others", 3},
        {"kicking", 3},
        {"self-hitting or self-injurious behavior", 4},
        {"head banging", 4},
        {"hits himself", 4},
        {"hits herself", 4},
        {"hitting themselves", 4},
        {"self-injurious", 4},
        {"hyper- or hyporeactivity to sensory input", 5},
        {"covers ears", 5},
        {"covering ears", 5},
        {"sensory overload", 5},
        {"object lining-up", 6},
        {"lining up", 6},
        {"lines up", 6},
        {"self-spinning or spinning objects", 7},
        {"spinning", 7},
        {"twirling", 7},
        {"upper limb stereotypies", 8},
        {"hand flapping", 8},
        {"flapping hands", 8},
        {"flapping his hands", 8},
        {"flapping her hands", 8},
        {"arm flapping", 8},
        {"wrist twisting", 8},
    };
    return lex;
}

bool looks_like_refusal(const std::string& normalized) {
    for (const char* pattern :
         {"i'm sorry", "i am sorry", "i can't assist", "i cannot assist", "can't help",
          "cannot help", "i cannot", "unable to process"}) {
        if (normalized.find(pattern) != std::string::npos) return true;
    }
    return false;
}

}  // namespace

void MockMllmClient::script(const std::string& image_digest, const std::string& response) {
    scripted_[image_digest] = response;
}

std::string MockMllmClient::send(const Image* image, const std::string& text) {
    if (image != nullptr) {
        const std::string digest =
            sha256_hex(image->rgb.data(), image->rgb.size());
        auto it = scripted_.find(digest);
        if (it != scripted_.end()) return it->second;
        // Procedural freestyle answer: pick 1-2 behaviors from the request hash.
        const uint64_t h = hash_mix(hash_mix(0x9e3779b97f4a7c15ULL, digest), text);
        const int first = static_cast<int>(h % kNumCategories);
        std::string answer = "Looking at the frames, the child appears to show " +
                             std::string(taxonomy()[static_cast<size_t>(first)].name) + ".";
        if ((h >> 8) % 3 == 0) {
            const int second = static_cast<int>((h >> 16) % kNumCategories);
            if (second != first) {
                answer += " There are also signs of " +
                          std::string(taxonomy()[static_cast<size_t>(second)].name) + ".";
            }
        }
        return answer;
    }
    // Text-only reformat request: canonicalize the text after the final
    // "Answer:" marker (or the whole text when absent).
    std::string tail = text;
    const size_t marker = text.rfind("Answer:");
    if (marker != std::string::npos) tail = text.substr(marker + 7);
    const std::string normalized = normalize_ws_lower(tail);
    if (looks_like_refusal(normalized)) return "Unable to determine.";
    LabelMask found;
    for (const auto& [phrase, id] : reformat_lexicon()) {
        if (normalized.find(phrase) != std::string::npos) found.add(id);
    }
    if (found.empty()) return "None of the above.";
    return found.joined();
}

std::string EchoMllmClient::send(const Image* /*image*/, const std::string& text) {
    return "Observed evidence for the listed behaviors. " + text;
}

// ---- caching / retry wrapper -------------------------------------------------------------

std::string request_digest(const Image* image, const std::string& text) {
    std::string key;
    if (image != nullptr) {
        key += sha256_hex(image->rgb.data(), image->rgb.size());
    } else {
        key += "no-image";
    }
    key += '\x1f';
    key += text;
    return sha256_hex(key);
}

CachingMllmClient::CachingMllmClient(MllmClient& inner, std::string disk_dir, int attempts,
                                     int backoff_ms)
    : inner_(inner), disk_dir_(std::move(disk_dir)), attempts_(attempts),
      backoff_ms_(backoff_ms) {}

std::string CachingMllmClient::send(const Image* image, const std::string& text) {
    const std::string key = request_digest(image, text);
    {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        if (!disk_dir_.empty()) {
            std::ifstream in(disk_dir_ + "/" + key + ".txt", std::ios::binary);
            if (in) {
                std::ostringstream ss;
                ss << in.rdbuf();
                cache_[key] = ss.str();
                return cache_[key];
            }
        }
    }
    std::string response;
    int attempt = 0;
    for (;;) {
        try {
            ++attempt;
            {
                std::lock_guard<std::mutex> lock(mutex_);
                ++calls_;
            }
            response = inner_.send(image, text);
            break;
        } catch (const TransportError&) {
            if (attempt >= attempts_) throw;
            std::this_thread::sleep_for(
                std::chrono::milliseconds(backoff_ms_ * (1 << (attempt - 1))));
        }
    }
    std::lock_guard<std::mutex> lock(mutex_);
    cache_[key] = response;
    if (!disk_dir_.empty()) {
        std::ofstream out(disk_dir_ + "/" + key + ".txt", std::ios::binary);
        out << response;
    }
    return response;
}

// ---- http client -----------------------------------------------------------------------

namespace {

std::string base64_encode(const uint8_t* data, size_t len) {
    static const char* alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (size_t i = 0; i < len; i += 3) {
        uint32_t chunk = static_cast<uint32_t>(data[i]) << 16;
        if (i + 1 < len) chunk |= static_cast<uint32_t>(data[i + 1]) << 8;
        if (i + 2 < len) chunk |= data[i + 2];
        out += alphabet[(chunk >> 18) & 0x3F];
        out += alphabet[(chunk >> 12) & 0x3F];
        out += i + 1 < len ? alphabet[(chunk >> 6) & 0x3F] : '=';
        out += i + 2 < len ? alphabet[chunk & 0x3F] : '=';
    }
    return out;
}

class HttpMllmClient final : public MllmClient {
public:
    explicit HttpMllmClient(HttpClientConfig config) : config_(std::move(config)) {
        // split endpoint into host and path
        std::string rest = config_.endpoint;
        const auto scheme = rest.find("://");
        if (scheme != std::string::npos) rest = rest.substr(scheme + 3);
        const auto slash = rest.find('/');
        host_ = slash == std::string::npos ? rest : rest.substr(0, slash);
        path_ = slash == std::string::npos ? "/v1/chat/completions" : rest.substr(slash);
    }

    std::string name() const override { return "http:" + config_.model; }

    std::string send(const Image* image, const std::string& text) override {
        ordered_json content = ordered_json::array();
        if (image != nullptr) {
            const std::string ppm = ppm_bytes(*image);
            content.push_back(
                {{"type", "image_url"},
                 {"image_url",
                  {{"url", "data:image/x-portable-pixmap;base64," +
                               base64_encode(reinterpret_cast<const uint8_t*>(ppm.data()),
                                             ppm.size())}}}});
        }
        content.push_back({{"type", "text"}, {"text", text}});
        ordered_json body;
        body["model"] = config_.model;
        body["temperature"] = config_.temperature;
        body["messages"] = ordered_json::array(
            {{{"role", "user"}, {"content", content}}});

        httplib::Client client(host_);
        client.set_read_timeout(config_.timeout_s, 0);
        httplib::Headers headers;
        const char* token = std::getenv(config_.token_env.c_str());
        if (token != nullptr && *token != '\0') {
            headers.emplace("Authorization", std::string("Bearer ") + token);
        }
        auto res = client.Post(path_, headers, body.dump(), "application/json");
        if (!res) throw TransportError("http client: request to " + host_ + " failed");
        if (res->status < 200 || res->status >= 300) {
            throw TransportError("http client: status " + std::to_string(res->status));
        }
        try {
            const auto obj = nlohmann::json::parse(res->body);
            return obj.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw TransportError(std::string("http client: malformed response: ") + e.what());
        }
    }

private:
    HttpClientConfig config_;
    std::string host_;
    std::string path_;
};

}  // namespace

std::unique_ptr<MllmClient> make_http_client(const HttpClientConfig& config) {
    return std::make_unique<HttpMllmClient>(config);
}

// ---- inference ---------------------------------------------------------------------------

TwoStepResult two_step_infer(MllmClient& step1, MllmClient& step2, const Image& image,
                             const PromptBundle& bundle, const PromptTemplate& tmpl) {
    TwoStepResult out;
    out.free_text = step1.send(&image, bundle.augmented);
    out.label_line = step2.send(nullptr, tmpl.reformat_instruction + "\n" + out.free_text);
    return out;
}

// ---- sidecar -----------------------------------------------------------------------------

Sidecar load_sidecar(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open sidecar " + path);
    Sidecar out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto obj = nlohmann::json::parse(line);
            SidecarEntry e;
            e.audio_caption = obj.value("audio_caption", "");
            e.speech_transcript = obj.value("speech_transcript", "");
            out[obj.at("clip_id").get<std::string>()] = e;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("sidecar line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void save_sidecar(const Sidecar& sidecar, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write sidecar " + path);
    for (const auto& [clip_id, e] : sidecar) {
        ordered_json obj;
        obj["clip_id"] = clip_id;
        obj["audio_caption"] = e.audio_caption;
        obj["speech_transcript"] = e.speech_transcript;
        out << obj.dump() << "\n";
    }
}

Sidecar synthetic_sidecar(const DatasetManifest& manifest, uint64_t seed) {
    static const std::vector<std::string> captions = {
        "a child plays with toys in a living room",
        "soft music plays while a child laughs",
        "a caregiver speaks gently nearby",
        "toy blocks clatter on the floor",
        "a child hums a quiet tune",
        "footsteps and a door closing can be heard",
        "a television murmurs in another room",
        "a ball bounces on a wooden floor",
    };
    static const std::vector<std::string> transcripts = {
        "how old are you",
        "look at me please",
        "do you want some juice",
        "what color is this one",
        "come sit with me",
        "can you say hello",
        "where is your toy",
        "",
    };
    Sidecar out;
    for (const auto& clip : manifest.clips) {
        Rng rng(hash_seed(hash_mix(seed, clip.clip_id), "sidecar"));
        SidecarEntry e;
        e.audio_caption = captions[rng.below(captions.size())];
        e.speech_transcript = transcripts[rng.below(transcripts.size())];
        out[clip.clip_id] = e;
    }
    return out;
}

// ---- instruction data ----------------------------------------------------------------------

InstructionBuildResult build_instruction_pairs(const DatasetManifest& manifest, Split split,
                                               const PromptTemplate& tmpl,
                                               const Sidecar& sidecar,
                                               const ImagePathResolver& image_path) {
    InstructionBuildResult out;
    for (const auto& clip : manifest.clips) {
        if (clip.split != split) continue;
        const std::string path = image_path ? image_path(clip) : "";
        if (path.empty()) {
            out.skipped.push_back({clip.clip_id, "missing composite image"});
            continue;
        }
        SidecarEntry side;
        auto it = sidecar.find(clip.clip_id);
        if (it != sidecar.end()) side = it->second;
        const PromptBundle bundle =
            build_prompt(tmpl, side.audio_caption, side.speech_transcript);
        out.pairs.push_back({clip.clip_id, path, bundle.augmented, clip.labels.joined()});
    }
    return out;
}

PostHocBuildResult generate_posthoc(MllmClient& client, const DatasetManifest& manifest,
                                    Split split, const PromptTemplate& tmpl,
                                    const Sidecar& sidecar,
                                    const ImagePathResolver& image_path,
                                    const std::function<const Image*(const ClipRecord&)>&
                                        image_for) {
    PostHocBuildResult out;
    for (const auto& clip : manifest.clips) {
        if (clip.split != split) continue;
        PostHocRecord rec;
        rec.clip_id = clip.clip_id;
        rec.image_path = image_path ? image_path(clip) : "";
        auto it = sidecar.find(clip.clip_id);
        if (it != sidecar.end()) {
            rec.audio_caption = it->second.audio_caption;
            rec.speech_transcript = it->second.speech_transcript;
        }
        rec.instruction = tmpl.posthoc_instruction;
        rec.ground_truth_block = ground_truth_block(clip.labels);
        rec.prompt = rec.instruction +
                     ac_st_suffix(rec.audio_caption, rec.speech_transcript) + "\n" +
                     rec.ground_truth_block;
        try {
            const Image* img = image_for ? image_for(clip) : nullptr;
            rec.reasoning = client.send(img, rec.prompt);
        } catch (const std::exception& e) {
            out.skipped.push_back({clip.clip_id, e.what()});
            continue;
        }
        out.records.push_back(std::move(rec));
    }
    return out;
}

AdHocBuildResult build_adhoc_pairs(const std::vector<PostHocRecord>& records,
                                   const PromptTemplate& tmpl) {
    AdHocBuildResult out;
    for (const auto& rec : records) {
        if (rec.reasoning.empty()) {
            out.skipped.push_back({rec.clip_id, "missing reasoning text"});
            continue;
        }
        AdHocPair pair;
        pair.clip_id = rec.clip_id;
        pair.image_path = rec.image_path;
        pair.prompt = tmpl.adhoc_instruction +
                      ac_st_suffix(rec.audio_caption, rec.speech_transcript);
        pair.target = rec.reasoning;
        out.pairs.push_back(std::move(pair));
    }
    return out;
}

// ---- conversation files ----------------------------------------------------------------------

namespace {

template <typename Pair>
std::string conversations_impl(const std::vector<Pair>& pairs) {
    std::string out;
    for (const auto& p : pairs) {
        ordered_json obj;
        obj["id"] = p.clip_id;
        obj["image"] = p.image_path;
        obj["conversations"] = ordered_json::array(
            {{{"from", "human"}, {"value", p.prompt}},
             {{"from", "model"}, {"value", p.target}}});
        out += obj.dump();
        out += '\n';
    }
    return out;
}

}  // namespace

std::string conversation_jsonl(const std::vector<InstructionPair>& pairs) {
    return conversations_impl(pairs);
}

std::string conversation_jsonl(const std::vector<AdHocPair>& pairs) {
    return conversations_impl(pairs);
}

std::string posthoc_jsonl(const std::vector<PostHocRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        ordered_json obj;
        obj["clip_id"] = r.clip_id;
        obj["image"] = r.image_path;
        obj["audio_caption"] = r.audio_caption;
        obj["speech_transcript"] = r.speech_transcript;
        obj["instruction"] = r.instruction;
        obj["ground_truth_block"] = r.ground_truth_block;
        obj["prompt"] = r.prompt;
        obj["reasoning"] = r.reasoning;
        out += obj.dump();
        out += '\n';
    }
    return out;
}

std::vector<PostHocRecord> load_posthoc_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open post-hoc records " + path);
    std::vector<PostHocRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto obj = nlohmann::json::parse(line);
            PostHocRecord r;
            r.clip_id = obj.at("clip_id").get<std::string>();
            r.image_path = obj.value("image", "");
            r.audio_caption = obj.value("audio_caption", "");
            r.speech_transcript = obj.value("speech_transcript", "");
            r.instruction = obj.value("instruction", "");
            r.ground_truth_block = obj.value("ground_truth_block", "");
            r.prompt = obj.value("prompt", "");
            r.reasoning = obj.value("reasoning", "");
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("post-hoc line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::string finetune_recipe_json() {
    ordered_json obj;
    obj["method"] = "lora";
    obj["lora_r"] = 128;
    obj["lora_alpha"] = 256;
    obj["projector_learning_rate"] = 2e-5;
    obj["epochs"] = 100;
    obj["validate_every_epochs"] = 10;
    obj["base_model"] = "llava-v1.5-13b";
    obj["vision_encoder"] = "clip-vit-l-14-336px";
    obj["notes"] =
        "Feed the emitted conversation files to the external fine-tuning stack; this "
        "repository only produces the training data.";
    return obj.dump(2) + "\n";
}

}  // namespace avbr
