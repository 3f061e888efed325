#pragma once

// Replacement-candidate generation for pivotal words.
//
// A generator proposes (word, plausibility) pairs for one position of a
// token sequence; plausibility stands in for a masked language model's
// conditional probability of the word in context. Two generators ship: a TSV
// synonym lexicon and a bridge to an external process speaking
// newline-delimited JSON over stdin/stdout.

#include <fcntl.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tagattack/encoder.hpp"
#include "tagattack/errors.hpp"
#include "tagattack/text.hpp"

namespace tagattack {

struct Proposal {
  std::string word;
  double plausibility = 0.0;
};

struct Candidate {
  std::string word;
  double plausibility = 0.0;  // in (0, 1]
  double similarity = 0.0;    // cosine of single-word encodings, in [-1, 1]
};

class CandidateGenerator {
 public:
  virtual ~CandidateGenerator() = default;
  // Raw proposals for `seq.token(position)`; at most `k` are needed.
  virtual std::vector<Proposal> propose(const TokenSequence& seq, std::size_t position,
                                        std::size_t k) = 0;
};

// ---------------------------------------------------------------------------

// Closed-world synonym table loaded from `word<TAB>candidate<TAB>plausibility`.
class Lexicon final : public CandidateGenerator {
 public:
  Lexicon() = default;

  void add(std::string word, std::string candidate, double plausibility) {
    if (!(plausibility > 0.0 && plausibility <= 1.0))
      throw DatasetError("lexicon plausibility must lie in (0,1]: " + word + " -> " + candidate);
    entries_[to_lower(word)].push_back({to_lower(candidate), plausibility});
  }

  static Lexicon load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot read lexicon: " + path.string());
    Lexicon lex;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      const auto t1 = line.find('\t');
      const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
      if (t2 == std::string::npos)
        throw DatasetError(path.string() + ":" + std::to_string(lineno) +
                           ": expected word<TAB>candidate<TAB>plausibility");
      double p = 0.0;
      try {
        p = std::stod(line.substr(t2 + 1));
      } catch (const std::exception&) {
        throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": bad plausibility");
      }
      lex.add(line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), p);
    }
    return lex;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DatasetError("cannot write lexicon: " + path.string());
    std::map<std::string, std::vector<Proposal>> sorted(entries_.begin(), entries_.end());
    for (const auto& [w, props] : sorted)
      for (const auto& p : props) out << w << '\t' << p.word << '\t' << p.plausibility << '\n';
  }

  std::size_t size() const noexcept { return entries_.size(); }

  std::vector<Proposal> propose(const TokenSequence& seq, std::size_t position,
                                std::size_t /*k*/) override {
    auto it = entries_.find(to_lower(seq.token(position)));
    if (it == entries_.end()) return {};
    return it->second;
  }

 private:
  std::unordered_map<std::string, std::vector<Proposal>> entries_;
};

// ---------------------------------------------------------------------------

// Child process exchanging one JSON object per line. One request is in
// flight at a time.
class ProcessBridge {
 public:
  explicit ProcessBridge(const std::string& command) {
    int to_child[2];
    int from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
      throw std::runtime_error("bridge: pipe() failed");
    pid_ = fork();
    if (pid_ < 0) throw std::runtime_error("bridge: fork() failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    signal(SIGPIPE, SIG_IGN);
    in_ = fdopen(from_child[0], "r");
    out_ = fdopen(to_child[1], "w");
    if (!in_ || !out_) throw std::runtime_error("bridge: fdopen() failed");
  }

  ProcessBridge(const ProcessBridge&) = delete;
  ProcessBridge& operator=(const ProcessBridge&) = delete;

  ~ProcessBridge() {
    if (out_) fclose(out_);
    if (in_) fclose(in_);
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
    }
  }

  nlohmann::json request(const nlohmann::json& message) {
    std::lock_guard<std::mutex> lock(mu_);
    const std::string line = message.dump() + "\n";
    if (fputs(line.c_str(), out_) == EOF || fflush(out_) != 0)
      throw std::runtime_error("bridge: child closed its input");
    std::string reply;
    int c;
    while ((c = fgetc(in_)) != EOF && c != '\n') reply.push_back(static_cast<char>(c));
    if (reply.empty() && c == EOF) throw std::runtime_error("bridge: child closed its output");
    try {
      return nlohmann::json::parse(reply);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(std::string("bridge: malformed reply: ") + e.what());
    }
  }

 private:
  pid_t pid_ = -1;
  FILE* in_ = nullptr;
  FILE* out_ = nullptr;
  std::mutex mu_;
};

// Request: {"word": w, "context": [tokens], "k": k}
// Response: {"candidates": [{"word": r, "plausibility": p}, ...]}
class BridgeGenerator final : public CandidateGenerator {
 public:
  explicit BridgeGenerator(const std::string& command) : bridge_(command) {}

  std::vector<Proposal> propose(const TokenSequence& seq, std::size_t position,
                                std::size_t k) override {
    nlohmann::json req = {{"word", seq.token(position)}, {"context", seq.tokens()}, {"k", k}};
    const nlohmann::json reply = bridge_.request(req);
    std::vector<Proposal> out;
    if (!reply.contains("candidates") || !reply["candidates"].is_array())
      throw std::runtime_error("bridge: reply lacks a candidates array");
    for (const auto& c : reply["candidates"]) {
      Proposal p{to_lower(c.at("word").get<std::string>()), c.at("plausibility").get<double>()};
      if (p.plausibility > 0.0 && p.plausibility <= 1.0) out.push_back(std::move(p));
    }
    return out;
  }

 private:
  ProcessBridge bridge_;
};

// ---------------------------------------------------------------------------

// Up to `k1` candidates for `seq.token(position)`: proposals equal to the
// current word are dropped, the rest filtered to single-word encoder
// similarity >= gamma and sorted by plausibility (descending, ties
// lexicographic).
inline std::vector<Candidate> generate_candidates(CandidateGenerator& generator,
                                                  const HashingEncoder& encoder,
                                                  const TokenSequence& seq, std::size_t position,
                                                  std::size_t k1, double gamma) {
  if (position >= seq.size()) throw PreconditionError("candidate position out of range");
  if (seq.is_masked(position)) throw PreconditionError("candidate position is masked");
  if (k1 == 0) return {};
  const std::string original = to_lower(seq.token(position));
  const Vector original_vec = encoder.encode_word(original);

  std::map<std::string, double> best;
  for (auto& p : generator.propose(seq, position, k1)) {
    if (p.word.empty() || p.word == original) continue;
    auto [it, inserted] = best.emplace(p.word, p.plausibility);
    if (!inserted) it->second = std::max(it->second, p.plausibility);
  }
  std::vector<Candidate> out;
  for (const auto& [word, plaus] : best) {
    const double sim = cosine_similarity(original_vec, encoder.encode_word(word));
    if (sim >= gamma) out.push_back({word, plaus, sim});
  }
  std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    return a.plausibility > b.plausibility;
  });
  if (out.size() > k1) out.resize(k1);
  return out;
}

}  // namespace tagattack
