#pragma once

// Umbrella header: the full synthesis / execution / repair engine.

#include "loom/canonical.hpp"
#include "loom/errors.hpp"
#include "loom/executors.hpp"
#include "loom/graph.hpp"
#include "loom/library.hpp"
#include "loom/reviewer.hpp"
#include "loom/runtime.hpp"
#include "loom/sandbox.hpp"
#include "loom/schema.hpp"
#include "loom/signals.hpp"
#include "loom/spec.hpp"
#include "loom/synthesis.hpp"
#include "loom/text.hpp"
#include "loom/validation.hpp"
