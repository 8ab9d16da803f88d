#pragma once

#include <chop/cnm.hpp>
#include <chop/composer.hpp>
#include <chop/config.hpp>
#include <chop/continuity.hpp>
#include <chop/corpus.hpp>
#include <chop/embedding.hpp>
#include <chop/error.hpp>
#include <chop/evalkit.hpp>
#include <chop/hnsw.hpp>
#include <chop/llm_gateway.hpp>
#include <chop/pipeline.hpp>
#include <chop/remote_chat.hpp>
#include <chop/remote_embedder.hpp>
#include <chop/vecstore.hpp>
