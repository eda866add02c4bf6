#pragma once

namespace fnl {

/// Train/eval phase switch shared by layers, models and the data pipeline.
enum class Mode { Train, Eval };

}  // namespace fnl
