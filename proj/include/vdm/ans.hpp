// Range-variant asymmetric numeral system coder: 32-bit state, 16-bit
// renormalization words, 16-bit frequency precision. push/pop are exact
// stack inverses, which is what bits-back coding relies on.
#pragma once

#include <cstdint>
#include <vector>

namespace vdm {

constexpr int kAnsPrecision = 16;                        // P
constexpr std::uint32_t kAnsTotal = 1u << kAnsPrecision; // sum of frequencies
constexpr std::uint32_t kAnsLow = 1u << 16;              // renormalization floor

// Integer pmf with frequencies summing to kAnsTotal, every entry >= 1.
struct FreqTable {
    std::vector<std::uint32_t> freq;
    std::vector<std::uint32_t> cum;  // cum[i] = sum of freq[0..i-1]; size B+1

    explicit FreqTable(std::vector<std::uint32_t> f);
    std::size_t size() const { return freq.size(); }
    // Symbol whose [cum, cum+freq) slot range contains `slot`.
    std::uint32_t find(std::uint32_t slot) const;
};

struct AnsState {
    std::uint32_t state = kAnsLow;
    std::vector<std::uint16_t> words;  // stack; back() is the top

    std::size_t word_count() const { return words.size(); }
    // Exact information content in bits: 16 per word plus log2(state).
    double bits() const;
};

// Encode `symbol`; may emit one word.
void ans_push(AnsState& s, std::uint32_t symbol, const FreqTable& table);
// Decode a symbol; may consume one word. Throws underflow on an empty stream.
std::uint32_t ans_pop(AnsState& s, const FreqTable& table);

// Gaussian discretized over B uniform bins covering [lo, lo + B*width); tail
// mass folds into the edge bins. Frequencies sum to kAnsTotal and are >= 1,
// rounding residual goes to the largest bin.
struct GridSpec {
    std::size_t bins = 1u << 12;
    double lo = -1.0;
    double width = 2.0 / 4096.0;

    static GridSpec centered(double center, double half_range, std::size_t bins);
    double center_of(std::size_t bin) const { return lo + (static_cast<double>(bin) + 0.5) * width; }
    std::size_t bin_of(double value) const;
};

struct DiscretizedGaussian {
    GridSpec grid;
    FreqTable table;
};

DiscretizedGaussian discretize_gaussian(double mean, double std_dev, const GridSpec& grid);

// Integer pmf over arbitrary positive weights (used for the V-level data
// conditional p(x_i | z_0,i)).
FreqTable quantize_pmf(const std::vector<double>& probs);

}  // namespace vdm
