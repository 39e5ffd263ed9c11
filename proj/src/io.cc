#include "fresh/io.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "fresh/error.h"
#include "json.hpp"

namespace fresh {

namespace {

using json = nlohmann::ordered_json;

constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "fresh-checkpoint";

template <typename Fn>
void for_each_line(std::string_view content, Fn&& fn) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    std::string_view line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

json tensor_json(const std::string& name, const Tensor& t) {
  return json{{"name", name}, {"rows", t.rows}, {"cols", t.cols}, {"data", t.data}};
}

void read_tensors(const json& arr, const std::vector<NamedTensor>& targets) {
  if (!arr.is_array() || arr.size() != targets.size()) {
    throw Error(ErrorKind::kParse, "checkpoint tensor list does not match model");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& t = arr[i];
    if (t.at("name").get<std::string>() != targets[i].name) {
      throw Error(ErrorKind::kParse, "unexpected tensor '" +
                                         t.at("name").get<std::string>() + "'");
    }
    Tensor& dst = *targets[i].tensor;
    dst.rows = t.at("rows").get<std::size_t>();
    dst.cols = t.at("cols").get<std::size_t>();
    dst.data = t.at("data").get<std::vector<double>>();
    if (dst.data.size() != dst.rows * dst.cols) {
      throw Error(ErrorKind::kParse, "tensor '" + targets[i].name + "' has wrong size");
    }
  }
}

json header(const char* kind) {
  return json{{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"kind", kind}};
}

json parse_checkpoint(std::string_view content, const char* kind) {
  json doc;
  try {
    doc = json::parse(content);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("checkpoint: ") + e.what());
  }
  if (doc.value("format", "") != kCheckpointFormat) {
    throw Error(ErrorKind::kParse, "not a checkpoint file");
  }
  if (doc.value("version", 0) != kCheckpointVersion) {
    throw Error(ErrorKind::kParse, "unsupported checkpoint version");
  }
  if (doc.value("kind", "") != kind) {
    throw Error(ErrorKind::kParse, std::string("expected a '") + kind + "' checkpoint");
  }
  return doc;
}

json model_json(const ModelParams& p) {
  const auto& c = p.config;
  json cfg{{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},
           {"num_heads", c.num_heads},   {"head_dim", c.head_dim},
           {"num_classes", c.num_classes}, {"separator_id", c.separator_id},
           {"padding_id", c.padding_id}};
  json tensors = json::array();
  for (const auto& t : p.tensors()) tensors.push_back(tensor_json(t.name, *t.tensor));
  return json{{"config", cfg}, {"tensors", tensors}};
}

ModelParams model_from(const json& j) {
  ModelParams p;
  const auto& cfg = j.at("config");
  p.config.vocab_size = cfg.at("vocab_size").get<std::size_t>();
  p.config.embed_dim = cfg.at("embed_dim").get<std::size_t>();
  p.config.num_heads = cfg.at("num_heads").get<std::size_t>();
  p.config.head_dim = cfg.at("head_dim").get<std::size_t>();
  p.config.num_classes = cfg.at("num_classes").get<int>();
  p.config.separator_id = cfg.at("separator_id").get<int>();
  p.config.padding_id = cfg.at("padding_id").get<int>();
  p.config.validate();
  read_tensors(j.at("tensors"), p.tensors());
  const auto& c = p.config;
  if (p.embedding.rows != c.vocab_size || p.embedding.cols != c.embed_dim ||
      p.query.rows != c.num_heads || p.query.cols != c.head_dim ||
      p.key.rows != c.num_heads * c.embed_dim || p.key.cols != c.head_dim ||
      p.output.rows != c.embed_dim ||
      p.output.cols != static_cast<std::size_t>(c.num_classes) ||
      p.bias.size() != static_cast<std::size_t>(c.num_classes)) {
    throw Error(ErrorKind::kParse, "checkpoint tensor shapes disagree with config");
  }
  return p;
}

json tagger_json(const TaggerParams& p) {
  json cfg{{"vocab_size", p.config.vocab_size},
           {"embed_dim", p.config.embed_dim},
           {"window", p.config.window}};
  json tensors = json::array();
  for (const auto& t : p.tensors()) tensors.push_back(tensor_json(t.name, *t.tensor));
  return json{{"config", cfg}, {"tensors", tensors}};
}

TaggerParams tagger_from(const json& j) {
  TaggerParams p;
  const auto& cfg = j.at("config");
  p.config.vocab_size = cfg.at("vocab_size").get<std::size_t>();
  p.config.embed_dim = cfg.at("embed_dim").get<std::size_t>();
  p.config.window = cfg.at("window").get<std::size_t>();
  read_tensors(j.at("tensors"), p.tensors());
  if (p.embedding.rows != p.config.vocab_size ||
      p.embedding.cols != p.config.embed_dim ||
      p.token_weight.size() != p.config.embed_dim ||
      p.context_weight.size() != p.config.embed_dim ||
      p.position_weight.size() != 1 || p.bias.size() != 1) {
    throw Error(ErrorKind::kParse, "checkpoint tensor shapes disagree with config");
  }
  return p;
}

}  // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path);
}

std::string scores_to_jsonl(const std::vector<ScoreVector>& scores) {
  std::string out;
  for (const auto& s : scores) {
    json j{{"id", s.doc_id}, {"scores", s.scores}, {"scorer", scorer_name(s.scorer)}};
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<ScoreVector> scores_from_jsonl(std::string_view content) {
  std::vector<ScoreVector> out;
  for_each_line(content, [&](const json& j) {
    ScoreVector s;
    s.doc_id = j.at("id").get<std::string>();
    s.scores = j.at("scores").get<std::vector<double>>();
    s.scorer = parse_scorer(j.value("scorer", "attention"));
    for (double v : s.scores) {
      if (!std::isfinite(v) || v < 0.0) {
        throw Error(ErrorKind::kSchema, "scores must be finite and >= 0 for '" +
                                            s.doc_id + "'");
      }
    }
    out.push_back(std::move(s));
  });
  return out;
}

std::string masks_to_jsonl(const std::vector<RationaleMask>& masks,
                           std::string_view source) {
  std::string out;
  for (const auto& m : masks) {
    json j{{"id", m.doc_id},
           {"selected", m.selected},
           {"contiguous", m.contiguous},
           {"k", m.k},
           {"p", m.ratio}};
    if (!source.empty()) j["source"] = source;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<RationaleMask> masks_from_jsonl(std::string_view content) {
  std::vector<RationaleMask> out;
  for_each_line(content, [&](const json& j) {
    RationaleMask m;
    m.doc_id = j.at("id").get<std::string>();
    m.selected = j.at("selected").get<std::vector<int>>();
    m.contiguous = j.at("contiguous").get<bool>();
    m.k = j.at("k").get<std::size_t>();
    m.ratio = j.value("p", 0.0);
    out.push_back(std::move(m));
  });
  return out;
}

std::string targets_to_jsonl(const std::vector<TokenTargets>& targets) {
  std::string out;
  for (const auto& t : targets) {
    std::vector<int> selected;
    for (std::size_t i = 0; i < t.labels.size(); ++i) {
      if (t.labels[i]) selected.push_back(static_cast<int>(i));
    }
    const bool contiguous = !selected.empty() &&
                            selected.back() - selected.front() + 1 ==
                                static_cast<int>(selected.size());
    json j{{"id", t.doc_id},
           {"selected", selected},
           {"contiguous", contiguous},
           {"k", selected.size()},
           {"source", target_source_name(t.source)},
           {"length", t.labels.size()}};
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<TokenTargets> targets_from_jsonl(std::string_view content) {
  std::vector<TokenTargets> out;
  for_each_line(content, [&](const json& j) {
    TokenTargets t;
    t.doc_id = j.at("id").get<std::string>();
    t.labels.assign(j.at("length").get<std::size_t>(), 0);
    for (int i : j.at("selected").get<std::vector<int>>()) {
      if (i < 0 || static_cast<std::size_t>(i) >= t.labels.size()) {
        throw Error(ErrorKind::kSchema, "target index out of range for '" + t.doc_id + "'");
      }
      t.labels[i] = 1;
    }
    const std::string source = j.value("source", "pseudo");
    if (source == "pseudo") {
      t.source = TargetSource::kPseudo;
    } else if (source == "human") {
      t.source = TargetSource::kHuman;
    } else {
      throw Error(ErrorKind::kSchema, "unknown target source '" + source + "'");
    }
    out.push_back(std::move(t));
  });
  return out;
}

std::string model_to_json(const ModelParams& params) {
  json j = header("classifier");
  j.update(model_json(params));
  return j.dump();
}

ModelParams model_from_json(std::string_view content) {
  const json j = parse_checkpoint(content, "classifier");
  try {
    return model_from(j);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("checkpoint: ") + e.what());
  }
}

std::string tagger_to_json(const TaggerParams& params) {
  json j = header("tagger");
  j.update(tagger_json(params));
  return j.dump();
}

TaggerParams tagger_from_json(std::string_view content) {
  const json j = parse_checkpoint(content, "tagger");
  try {
    return tagger_from(j);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("checkpoint: ") + e.what());
  }
}

std::string e2e_to_json(const GeneratorParams& gen, const ModelParams& enc) {
  json j = header("e2e");
  j["generator"] = tagger_json(gen);
  j["encoder"] = model_json(enc);
  return j.dump();
}

std::pair<GeneratorParams, ModelParams> e2e_from_json(std::string_view content) {
  const json j = parse_checkpoint(content, "e2e");
  try {
    return {tagger_from(j.at("generator")), model_from(j.at("encoder"))};
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("checkpoint: ") + e.what());
  }
}

}  // namespace fresh
