#ifndef FRESH_IO_H_
#define FRESH_IO_H_

#include <string>
#include <string_view>
#include <vector>

#include "fresh/discretize.h"
#include "fresh/e2e.h"
#include "fresh/extractor.h"
#include "fresh/model.h"
#include "fresh/scores.h"

namespace fresh {

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// {"id": ..., "scores": [...], "scorer": ...} per line.
std::string scores_to_jsonl(const std::vector<ScoreVector>& scores);
std::vector<ScoreVector> scores_from_jsonl(std::string_view content);

// {"id": ..., "selected": [...], "contiguous": bool, "k": int, "p": ratio}
// per line, plus "source" when given.
std::string masks_to_jsonl(const std::vector<RationaleMask>& masks,
                           std::string_view source = {});
std::vector<RationaleMask> masks_from_jsonl(std::string_view content);

// Mask format with "source" and the token count "length".
std::string targets_to_jsonl(const std::vector<TokenTargets>& targets);
std::vector<TokenTargets> targets_from_jsonl(std::string_view content);

// Versioned JSON tensor containers; see docs/checkpoint_format.md.
std::string model_to_json(const ModelParams& params);
ModelParams model_from_json(std::string_view content);
std::string tagger_to_json(const TaggerParams& params);
TaggerParams tagger_from_json(std::string_view content);
std::string e2e_to_json(const GeneratorParams& gen, const ModelParams& enc);
std::pair<GeneratorParams, ModelParams> e2e_from_json(std::string_view content);

}  // namespace fresh

#endif  // FRESH_IO_H_
