/**
 * Pure chat state. Every mutation is an event folded by `reduce`, so the
 * state a user sees is a function of the ordered server responses alone;
 * `replay` rebuilds it from the event log.
 */

import type { Source, TurnResponse } from "./api.js";

export type Role = "user" | "assistant" | "clarification";

export interface ChatTurn {
  role: Role;
  text: string;
  sources: Source[];
  elapsedMs: number | null;
  /** Server-side turn index used for feedback; assistant turns only. */
  serverTurnIndex: number | null;
  rating: number | null;
  ratingLocked: boolean;
}

export interface ChatState {
  sessionId: string | null;
  turns: ChatTurn[];
  busy: boolean;
  /** Retryable error banner; null when hidden. */
  error: string | null;
  /** Input preserved for retry after a failed send. */
  restoredInput: string;
  awaitingClarification: boolean;
  serverTurnCount: number;
  toast: string | null;
}

export type ChatEvent =
  | { kind: "question_sent"; text: string }
  | { kind: "reply_sent"; text: string }
  | { kind: "turn_received"; response: TurnResponse }
  | { kind: "request_failed"; message: string; restoredInput: string }
  | { kind: "rating_locked"; turnPosition: number; rating: number }
  | { kind: "rating_failed"; message: string };

export function initialState(sessionId: string | null = null): ChatState {
  return {
    sessionId,
    turns: [],
    busy: false,
    error: null,
    restoredInput: "",
    awaitingClarification: false,
    serverTurnCount: 0,
    toast: null,
  };
}

function userTurn(text: string): ChatTurn {
  return {
    role: "user",
    text,
    sources: [],
    elapsedMs: null,
    serverTurnIndex: null,
    rating: null,
    ratingLocked: false,
  };
}

function turnFromResponse(response: TurnResponse, serverTurnIndex: number): ChatTurn {
  if (response.status === "answered") {
    return {
      role: "assistant",
      text: response.answer ?? "",
      sources: response.sources,
      elapsedMs: response.trace.elapsed_ms,
      serverTurnIndex,
      rating: null,
      ratingLocked: false,
    };
  }
  return {
    role: "clarification",
    text: response.clarification_question ?? "",
    sources: [],
    elapsedMs: response.trace.elapsed_ms,
    serverTurnIndex,
    rating: null,
    ratingLocked: false,
  };
}

export function reduce(state: ChatState, event: ChatEvent): ChatState {
  switch (event.kind) {
    case "question_sent":
    case "reply_sent":
      return {
        ...state,
        turns: [...state.turns, userTurn(event.text)],
        busy: true,
        error: null,
        restoredInput: "",
        toast: null,
        awaitingClarification:
          event.kind === "reply_sent" ? false : state.awaitingClarification,
      };
    case "turn_received": {
      const response = event.response;
      const turn = turnFromResponse(response, state.serverTurnCount);
      return {
        ...state,
        sessionId: response.session_id,
        turns: [...state.turns, turn],
        busy: false,
        serverTurnCount: state.serverTurnCount + 1,
        awaitingClarification: response.status === "clarification_needed",
      };
    }
    case "request_failed":
      return {
        ...state,
        busy: false,
        error: event.message,
        restoredInput: event.restoredInput,
      };
    case "rating_locked": {
      const turns = state.turns.map((turn, index) =>
        index === event.turnPosition
          ? { ...turn, rating: event.rating, ratingLocked: true }
          : turn,
      );
      return { ...state, turns, toast: null };
    }
    case "rating_failed":
      return { ...state, toast: event.message };
  }
}

export function replay(events: ChatEvent[], sessionId: string | null = null): ChatState {
  return events.reduce(reduce, initialState(sessionId));
}

/** Clarify is only legal once a clarification_needed response exists. */
export function canClarify(state: ChatState): boolean {
  return state.awaitingClarification && !state.busy && state.sessionId !== null;
}

export function canAsk(state: ChatState): boolean {
  return !state.busy;
}

/** An assistant turn accepts exactly one rating. */
export function canRate(state: ChatState, turnPosition: number): boolean {
  const turn = state.turns[turnPosition];
  return (
    turn !== undefined &&
    turn.role === "assistant" &&
    !turn.ratingLocked &&
    turn.serverTurnIndex !== null &&
    state.sessionId !== null
  );
}
