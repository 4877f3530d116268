#pragma once

#include "kagent/agent.hpp"
#include "kagent/errors.hpp"
#include "kagent/executor.hpp"
#include "kagent/llm.hpp"
#include "kagent/memory.hpp"
#include "kagent/metrics.hpp"
#include "kagent/retrieval.hpp"
#include "kagent/run.hpp"
#include "kagent/task.hpp"
