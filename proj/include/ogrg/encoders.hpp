#pragma once

#include <array>
#include <cctype>
#include <fstream>
#include <functional>
#include <unordered_map>

#include "ogrg/nn.hpp"

namespace ogrg {

// Scale-configurable stand-ins for the three backbones. The default toy
// configuration trains from scratch on a desktop CPU; the full-size
// counterparts are out of scope.
struct BackboneConfig {
    std::array<int, 4> channels = {32, 64, 128, 256};  // doubles per stage
    std::array<int, 4> depths = {1, 1, 2, 1};
    std::array<int, 4> heads = {1, 2, 4, 8};
    int window = 0;  // 0 = one window spanning the stage map
    bool shifted_windows = false;
    int mlp_ratio = 4;
    int token_dim = 64;
    int max_tokens = 20;
    int vocab_size = 256;
    int lang_blocks_per_stage = 1;
    bool feed_language_back = true;
    int aligner_heads = 1;
    int patch_stride = 4;

    void validate() const {
        for (int i = 0; i < 4; ++i) {
            if (channels[static_cast<std::size_t>(i)] <= 0) throw ParameterError("config: channels must be positive");
            if (i > 0 && channels[static_cast<std::size_t>(i)] != 2 * channels[static_cast<std::size_t>(i - 1)])
                throw ParameterError("config: stage channels must double");
        }
        if (max_tokens < 1) throw ParameterError("config: max_tokens must be >= 1");
    }

    int stage_size(int input, int stage) const { return input / (patch_stride << stage); }
};

// ---------------------------------------------------------------------------
// Tokenizer

class Vocab {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocab() : tokens_{"<pad>", "<unk>"} { reindex(); }

    explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        if (tokens_.size() < 2 || tokens_[0] != "<pad>" || tokens_[1] != "<unk>")
            throw InputError("vocab: line 0 must be <pad> and line 1 must be <unk>");
        reindex();
    }

    static Vocab load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw InputError("vocab: cannot open " + path);
        std::vector<std::string> tokens;
        std::string line;
        while (std::getline(in, line)) tokens.push_back(line);
        return Vocab(std::move(tokens));
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw InputError("vocab: cannot write " + path);
        for (const auto& t : tokens_) out << t << "\n";
    }

    // Frequency-then-lexicographic order keeps vocabulary builds reproducible.
    static Vocab build(const std::vector<std::string>& corpus, int max_size = 4096);

    int id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    int size() const { return static_cast<int>(tokens_.size()); }

  private:
    void reindex() {
        index_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<int>(i);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

inline std::vector<std::string> normalize_words(const std::string& text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            cleaned.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        else if (std::isspace(static_cast<unsigned char>(c)) || std::ispunct(static_cast<unsigned char>(c)))
            cleaned.push_back(std::ispunct(static_cast<unsigned char>(c)) ? ' ' : c);
    }
    std::vector<std::string> words;
    std::istringstream is(cleaned);
    std::string w;
    while (is >> w) words.push_back(w);
    return words;
}

struct TokenizedText {
    std::vector<int> ids;      // length L
    std::vector<float> mask;   // 1 = real token, 0 = pad
    int real_tokens = 0;
};

inline TokenizedText tokenize(const std::string& text, const Vocab& vocab, int max_len) {
    auto words = normalize_words(text);
    if (words.empty()) throw InputError("tokenize: empty expression after normalization");
    TokenizedText out;
    out.ids.assign(static_cast<std::size_t>(max_len), Vocab::kPad);
    out.mask.assign(static_cast<std::size_t>(max_len), 0.0f);
    out.real_tokens = std::min<int>(max_len, static_cast<int>(words.size()));
    for (int i = 0; i < out.real_tokens; ++i) {
        out.ids[static_cast<std::size_t>(i)] = vocab.id(words[static_cast<std::size_t>(i)]);
        out.mask[static_cast<std::size_t>(i)] = 1.0f;
    }
    return out;
}

inline std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
    std::string out;
    for (int id : ids) {
        if (id == Vocab::kPad) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.token(id);
    }
    return out;
}

inline Vocab Vocab::build(const std::vector<std::string>& corpus, int max_size) {
    std::unordered_map<std::string, int> freq;
    for (const auto& text : corpus)
        for (const auto& w : normalize_words(text)) ++freq[w];
    std::vector<std::pair<std::string, int>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> tokens{"<pad>", "<unk>"};
    for (const auto& [w, n] : ranked) {
        if (static_cast<int>(tokens.size()) >= max_size) break;
        tokens.push_back(w);
    }
    return Vocab(std::move(tokens));
}

// ---------------------------------------------------------------------------
// Depth normalization: (D - median) / spread over valid pixels, invalid
// (zero) readings imputed with the median. Invariant under positive affine
// rescaling of the raw depth.
template <typename S>
Tensor<S> normalize_depth(const Tensor<S>& raw) {
    if (raw.ndim() != 3 || raw.dim(0) != 1) throw DimensionError("normalize_depth: expected [1,H,W]");
    std::vector<S> valid;
    valid.reserve(raw.numel());
    for (S v : raw.values())
        if (v > S(0)) valid.push_back(v);
    if (valid.empty()) throw InputError("normalize_depth: depth map has no valid readings");
    std::sort(valid.begin(), valid.end());
    const S median = valid[valid.size() / 2];
    double acc = 0.0;
    for (S v : valid) {
        const double d = static_cast<double>(v - median);
        acc += d * d;
    }
    const double spread = std::sqrt(acc / static_cast<double>(valid.size()));
    const S inv = spread > 1e-12 ? static_cast<S>(1.0 / spread) : S(1);
    Tensor<S> out(raw.shape());
    for (std::size_t i = 0; i < raw.numel(); ++i) {
        const S v = raw.values()[i] > S(0) ? raw.values()[i] : median;
        out.values()[i] = (v - median) * inv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Visual backbone: patch embedding, four stages of windowed-attention
// transformer blocks, patch merging between stages. The fusion callback
// observes each stage output and may replace the stream before merging.

template <typename S>
using StageCallback = std::function<Tensor<S>(int stage, const Tensor<S>& f_in)>;

template <typename S>
struct VisualBackbone {
    BackboneConfig cfg;
    int input_size = 0;
    Conv2dLayer<S> patch_proj;
    Tensor<S> pos_embed;
    std::vector<std::vector<TransformerBlock<S>>> stages;
    std::vector<Conv2dLayer<S>> merges;

    VisualBackbone() = default;
    VisualBackbone(ParamStore<S>& ps, const std::string& name, const BackboneConfig& cfg_, int input_size_,
                   Rng& rng)
        : cfg(cfg_), input_size(input_size_) {
        if (input_size % 32 != 0) throw InputError("visual backbone: input size must be divisible by 32");
        const int s = cfg.patch_stride;
        patch_proj = Conv2dLayer<S>(ps, name + ".patch", 3 * s * s, cfg.channels[0], 1, 1, rng);
        const int h1 = input_size / s;
        pos_embed = ps.param(name + ".pos", Shape{cfg.channels[0], h1, h1}, Init::TruncNormal, rng);
        for (int i = 0; i < 4; ++i) {
            std::vector<TransformerBlock<S>> blocks;
            for (int b = 0; b < cfg.depths[static_cast<std::size_t>(i)]; ++b)
                blocks.emplace_back(ps, name + ".s" + std::to_string(i) + ".b" + std::to_string(b),
                                    cfg.channels[static_cast<std::size_t>(i)],
                                    cfg.heads[static_cast<std::size_t>(i)], cfg.mlp_ratio, rng);
            stages.push_back(std::move(blocks));
            if (i < 3)
                merges.emplace_back(ps, name + ".merge" + std::to_string(i),
                                    cfg.channels[static_cast<std::size_t>(i)] * 4,
                                    cfg.channels[static_cast<std::size_t>(i + 1)], 1, 1, rng);
        }
    }

    int effective_window(int stage_hw) const {
        int w = cfg.window > 0 ? std::min(cfg.window, stage_hw) : stage_hw;
        if (stage_hw % w != 0)
            throw InputError("visual backbone: window " + std::to_string(w) + " does not divide stage size " +
                             std::to_string(stage_hw));
        return w;
    }

    // Returns the four pre-fusion stage features f_in_v^i. When a callback is
    // given, its return value replaces the stream before patch merging.
    std::vector<Tensor<S>> forward(const Tensor<S>& image, const StageCallback<S>& fuse = nullptr) const {
        if (image.ndim() != 3 || image.dim(0) != 3)
            throw InputError("visual backbone: expected [3,H,W] image, got " + shape_str(image.shape()));
        if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
            throw InputError("visual backbone: spatial size must be divisible by 32");

        Tensor<S> x = patch_proj.forward(space_to_depth(image, cfg.patch_stride));
        x = add(x, pos_embed);
        std::vector<Tensor<S>> features;
        for (int i = 0; i < 4; ++i) {
            const int hw = x.dim(1);
            const int win = effective_window(hw);
            for (std::size_t b = 0; b < stages[static_cast<std::size_t>(i)].size(); ++b) {
                const bool shift = cfg.shifted_windows && (b % 2 == 1) && win < hw;
                Tensor<S> stream = shift ? roll_hw(x, win / 2, win / 2) : x;
                Tensor<S> tokens = window_partition(stream, win);
                const int per_window = win * win;
                const int n_windows = hw * hw / per_window;
                if (n_windows == 1) {
                    tokens = stages[static_cast<std::size_t>(i)][b].forward(tokens);
                } else {
                    std::vector<Tensor<S>> outs;
                    outs.reserve(static_cast<std::size_t>(n_windows));
                    for (int wdx = 0; wdx < n_windows; ++wdx)
                        outs.push_back(stages[static_cast<std::size_t>(i)][b].forward(
                            narrow0(tokens, wdx * per_window, per_window)));
                    tokens = concat0(outs);
                }
                stream = window_unpartition(tokens, win, hw, hw);
                x = shift ? roll_hw(stream, -win / 2, -win / 2) : stream;
            }
            features.push_back(x);
            if (fuse) x = fuse(i, x);
            if (i < 3) x = merges[static_cast<std::size_t>(i)].forward(space_to_depth(x, 2));
        }
        return features;
    }

  private:
    static Tensor<S> roll_hw(const Tensor<S>& x, int dy, int dx) {
        const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
        auto wrap = [](int v, int m) { return ((v % m) + m) % m; };
        Tensor<S> y(x.shape());
        for (int ic = 0; ic < c; ++ic)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx)
                    y.at(ic, yy, xx) = x.at(ic, wrap(yy - dy, h), wrap(xx - dx, w));
        if (grad_enabled_for(x)) {
            y.set_requires_grad(true);
            auto xd = x.data_ptr();
            auto yd = y.data_ptr();
            Tape<S>::current()->record([xd, yd, c, h, w, dy, dx, wrap] {
                if (yd->grad.empty()) return;
                xd->ensure_grad();
                for (int ic = 0; ic < c; ++ic)
                    for (int yy = 0; yy < h; ++yy)
                        for (int xx = 0; xx < w; ++xx)
                            xd->grad[(static_cast<std::size_t>(ic) * h + wrap(yy - dy, h)) * w + wrap(xx - dx, w)] +=
                                yd->grad[(static_cast<std::size_t>(ic) * h + yy) * w + xx];
                std::fill(yd->grad.begin(), yd->grad.end(), S(0));
            });
        }
        return y;
    }
};

// ---------------------------------------------------------------------------
// Language backbone: embedding + learned positions, transformer blocks in
// four consecutive groups. Pad rows are zeroed at the input and after every
// block; pad keys carry a large negative attention bias.

template <typename S>
struct LanguageBackbone {
    BackboneConfig cfg;
    Tensor<S> embed;      // [V, C_t]
    Tensor<S> pos;        // [L, C_t]
    std::vector<std::vector<TransformerBlock<S>>> groups;

    LanguageBackbone() = default;
    LanguageBackbone(ParamStore<S>& ps, const std::string& name, const BackboneConfig& cfg_, Rng& rng)
        : cfg(cfg_) {
        embed = ps.param(name + ".embed", Shape{cfg.vocab_size, cfg.token_dim}, Init::TruncNormal, rng);
        pos = ps.param(name + ".pos", Shape{cfg.max_tokens, cfg.token_dim}, Init::TruncNormal, rng);
        const int heads = cfg.token_dim % 4 == 0 ? 4 : 1;
        for (int g = 0; g < 4; ++g) {
            std::vector<TransformerBlock<S>> blocks;
            for (int b = 0; b < cfg.lang_blocks_per_stage; ++b)
                blocks.emplace_back(ps, name + ".g" + std::to_string(g) + ".b" + std::to_string(b),
                                    cfg.token_dim, heads, cfg.mlp_ratio, rng);
            groups.push_back(std::move(blocks));
        }
    }

    struct Masks {
        Tensor<S> mask01;    // [L], 1 real / 0 pad
        Tensor<S> key_bias;  // [L], 0 real / -1e9 pad
    };

    Masks make_masks(const std::vector<float>& mask) const {
        if (static_cast<int>(mask.size()) != cfg.max_tokens)
            throw InputError("language backbone: expected " + std::to_string(cfg.max_tokens) + " token slots");
        bool any_real = false;
        for (float m : mask) any_real = any_real || m > 0.5f;
        if (!any_real) throw InputError("language backbone: all tokens are padding");
        Masks out{Tensor<S>(Shape{cfg.max_tokens}), Tensor<S>(Shape{cfg.max_tokens})};
        for (int i = 0; i < cfg.max_tokens; ++i) {
            const bool real = mask[static_cast<std::size_t>(i)] > 0.5f;
            out.mask01[static_cast<std::size_t>(i)] = real ? S(1) : S(0);
            out.key_bias[static_cast<std::size_t>(i)] = real ? S(0) : S(-1e9);
        }
        return out;
    }

    Tensor<S> embed_input(const std::vector<int>& ids, const Masks& m) const {
        if (static_cast<int>(ids.size()) != cfg.max_tokens)
            throw InputError("language backbone: expected " + std::to_string(cfg.max_tokens) + " token slots");
        return mul_rows(add(embedding(ids, embed), pos), m.mask01);
    }

    Tensor<S> run_group(int g, const Tensor<S>& x, const Masks& m) const {
        Tensor<S> out = x;
        for (const auto& block : groups.at(static_cast<std::size_t>(g)))
            out = mul_rows(block.forward(out, &m.key_bias), m.mask01);
        return out;
    }

    // mask: 1 = real token, 0 = pad; rejects all-pad inputs. The fusion
    // callback observes each group output; its return value continues the
    // stream when feed_language_back is set.
    std::vector<Tensor<S>> forward(const std::vector<int>& ids, const std::vector<float>& mask,
                                   const StageCallback<S>& fuse = nullptr) const {
        Masks m = make_masks(mask);
        Tensor<S> x = embed_input(ids, m);
        std::vector<Tensor<S>> features;
        for (int g = 0; g < 4; ++g) {
            x = run_group(g, x, m);
            features.push_back(x);
            if (fuse) {
                Tensor<S> fused = fuse(g, x);
                if (cfg.feed_language_back) x = fused;
            }
        }
        return features;
    }
};

// ---------------------------------------------------------------------------
// Depth backbone: residual conv stand-in, total stride 4, C1 output channels.

template <typename S>
struct DepthBackbone {
    ConvBnRelu<S> stem1, stem2;
    ResidualBlock<S> block1, block2;

    DepthBackbone() = default;
    DepthBackbone(ParamStore<S>& ps, const std::string& name, const BackboneConfig& cfg, Rng& rng)
        : stem1(ps, name + ".stem1", 1, cfg.channels[0] / 2, 7, 2, rng),
          stem2(ps, name + ".stem2", cfg.channels[0] / 2, cfg.channels[0], 3, 2, rng),
          block1(ps, name + ".res1", cfg.channels[0], cfg.channels[0], 1, rng),
          block2(ps, name + ".res2", cfg.channels[0], cfg.channels[0], 1, rng) {}

    // normalized depth [1,H,W] -> [C1, H/4, W/4]
    Tensor<S> forward(const Tensor<S>& d, bool train) const {
        Tensor<S> x = stem2.forward(stem1.forward(d, train), train);
        return block2.forward(block1.forward(x, train), train);
    }
};

}  // namespace ogrg
