#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bridge/grid.hpp"
#include "bridge/layout.hpp"
#include "bridge/masktools.hpp"

namespace bridge {

// Closed instruction vocabulary: 3 ops, 3 shapes, 8 colors, 1 null.
namespace vocab {
constexpr int64_t kOpAdd = 0;
constexpr int64_t kOpRemove = 1;
constexpr int64_t kOpRecolor = 2;
constexpr int64_t kShapeBase = 3;    // circle, square, triangle
constexpr int64_t kColorBase = 6;    // 8-color palette
constexpr int64_t kNull = 14;
constexpr int64_t kSize = 15;
constexpr int kTokensPerInstruction = 3;
}  // namespace vocab

enum class EditOp { Add = 0, Remove = 1, Recolor = 2 };
enum class ShapeKind { Circle = 0, Square = 1, Triangle = 2 };

const char* edit_op_name(EditOp op);
EditOp edit_op_from_name(const std::string& s);

// One local-edit training/eval unit.
struct EditSample {
    int64_t id = 0;
    uint64_t seed = 0;
    Grid source;      // 3 x side x side
    Grid target;      // background-identical outside the edit region
    Grid coarse_mask; // perturbed hint, 1 x side x side
    Grid true_mask;   // exact change footprint (diagnostic)
    std::vector<int64_t> instruction;  // [op, shape, color] token ids
    BBox bbox;        // patch-aligned bbox of the coarse mask
    EditOp op = EditOp::Add;
    int shape = 0;
    int color = 0;
};

struct SynthConfig {
    int side = 32;
    int patch = 2;
    PerturbParams perturb;  // seed field is overridden per sample
};

std::vector<int64_t> null_instruction();

// Deterministic per seed. Source and target are bit-identical outside the
// dilated true mask; mean abs difference inside the true mask exceeds 0.05
// (violating draws are retried with a derived seed).
EditSample gen_triplet(uint64_t seed, EditOp op, const SynthConfig& cfg);

struct DatasetManifest {
    std::vector<EditSample> train;
    std::vector<EditSample> test;
};

// Round-robin edit types (class counts within +-1 of n/3), disjoint splits.
DatasetManifest gen_dataset(uint64_t seed, int n, double train_ratio, const SynthConfig& cfg);

// Write samples + manifest CSVs (id,source,target,mask,op,shape,color,seed)
// under dir/{train,test}. Files: src_<id>.ppm, tgt_<id>.ppm, mask_<id>.pgm.
void write_dataset(const std::string& dir, const DatasetManifest& ds);

// Reload a manifest written by write_dataset.
std::vector<EditSample> load_manifest(const std::string& manifest_csv, int patch);

}  // namespace bridge
