#pragma once

#include <string>
#include <vector>

#include "pfdiqa/image.hpp"
#include "pfdiqa/teacher.hpp"
#include "pfdiqa/training.hpp"

namespace pfd {

// Three panels side by side — input image, decoder attention before sampling,
// decoder attention after sampling — with the attention maps upsampled
// bilinearly from the patch grid and heat-colored. One PNG per call.
void write_attention_panels(const PipelineTrace& trace, const Image& img,
                            const std::string& out_png);

// Predicted-score vs oracle-MOS scatter with the identity diagonal and the
// report's correlation numbers in the caption.
void write_score_scatter_svg(const EvalReport& report, const std::string& out_svg);

// Mean held-out SRCC against sampling-step count, one whisker per cell at
// +/- one across-seed standard deviation. Cells label their count ("5 steps").
void write_steps_chart_svg(const std::vector<AblationCell>& steps,
                           const std::string& out_svg);

// Per-state sampler trajectory for one image: state index, timestep, state
// norm, and feature distance to the teacher tokens. Requires a student with
// the denoising branch enabled.
void write_trajectory_csv(const Student& student, const Teacher& teacher,
                          const Image& img, const std::string& image_id,
                          const std::string& out_csv);

}  // namespace pfd
