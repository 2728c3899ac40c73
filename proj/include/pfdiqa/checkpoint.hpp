#pragma once

#include <string>
#include <vector>

#include "pfdiqa/params.hpp"

namespace pfd {

// Header of a model archive. `kind` names the producing stage ("teacher" or
// "student"), `config_canonical` is the full canonical config text of the run
// that produced it, `prompt_bank_hash` pins the frozen prompt bank, and
// `teacher_hash` (students only, empty otherwise) records the teacher archive
// the student distilled from. `train_source_ids` lists the source images seen
// during training so evaluation can refuse overlapping splits.
struct CheckpointMeta {
    std::string kind;
    std::string config_canonical;
    std::string prompt_bank_hash;
    std::string teacher_hash;
    std::vector<int> train_source_ids;
};

// Writes a single archive: magic, format version, a JSON header carrying the
// metadata plus the tensor index (name/rows/cols in store order), then the raw
// little-endian double buffer of every tensor. Byte-identical for identical
// (meta, store) inputs.
void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamStore& store);

struct LoadedCheckpoint {
    CheckpointMeta meta;
    ParamStore store;
};

// Reads an archive written by save_checkpoint, rebuilding the parameter store
// bit-exactly. Throws IoError on missing files, bad magic, unsupported
// version, malformed headers, or truncated tensor data.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace pfd
