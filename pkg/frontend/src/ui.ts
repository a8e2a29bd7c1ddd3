/**
 * DOM controller: renders the chat from pure state and wires user actions
 * to the API. One request is in flight per session at most; inputs are
 * disabled while the assistant is working.
 */

import { ApiError, type AssistantApi } from "./api.js";
import {
  canAsk,
  canClarify,
  canRate,
  initialState,
  reduce,
  type ChatEvent,
  type ChatState,
  type ChatTurn,
} from "./state.js";

export const SESSION_STORAGE_KEY = "va_session_id";

export class ChatController {
  state: ChatState;
  readonly events: ChatEvent[] = [];

  constructor(
    private readonly api: AssistantApi,
    private readonly root: HTMLElement,
    private readonly storage: Storage,
  ) {
    this.state = initialState(storage.getItem(SESSION_STORAGE_KEY));
    this.render();
  }

  private apply(event: ChatEvent): void {
    this.events.push(event);
    this.state = reduce(this.state, event);
    if (this.state.sessionId) {
      this.storage.setItem(SESSION_STORAGE_KEY, this.state.sessionId);
    }
    this.render();
  }

  async sendQuestion(text: string): Promise<void> {
    const question = text.trim();
    if (!question || !canAsk(this.state)) return;
    this.apply({ kind: "question_sent", text: question });
    try {
      const response = await this.api.ask(question, this.state.sessionId);
      this.apply({ kind: "turn_received", response });
    } catch (err) {
      this.handleSendFailure(err, question);
    }
  }

  async sendClarification(text: string): Promise<void> {
    const reply = text.trim();
    if (!reply || !canClarify(this.state)) return;
    this.apply({ kind: "reply_sent", text: reply });
    try {
      const response = await this.api.clarify(this.state.sessionId as string, reply);
      this.apply({ kind: "turn_received", response });
    } catch (err) {
      this.handleSendFailure(err, reply);
    }
  }

  async submitRating(turnPosition: number, rating: number): Promise<void> {
    if (!canRate(this.state, turnPosition)) return;
    const turn = this.state.turns[turnPosition];
    try {
      await this.api.feedback(
        this.state.sessionId as string,
        turn.serverTurnIndex as number,
        rating,
      );
      this.apply({ kind: "rating_locked", turnPosition, rating });
    } catch (err) {
      const message = err instanceof ApiError ? err.message : String(err);
      this.apply({ kind: "rating_failed", message: `rating failed: ${message}` });
    }
  }

  retry(): void {
    const text = this.state.restoredInput;
    if (!text) return;
    if (this.state.awaitingClarification) {
      void this.sendClarification(text);
    } else {
      void this.sendQuestion(text);
    }
  }

  private handleSendFailure(err: unknown, attempted: string): void {
    const message =
      err instanceof ApiError
        ? `The assistant is unavailable (${err.status || "network"}): ${err.message}`
        : `Unexpected error: ${String(err)}`;
    // a session id rejected by the server should not poison future asks
    if (err instanceof ApiError && err.status === 404) {
      this.storage.removeItem(SESSION_STORAGE_KEY);
      this.state = { ...this.state, sessionId: null };
    }
    this.apply({ kind: "request_failed", message, restoredInput: attempted });
  }

  // ------------------------------------------------------------- rendering

  render(): void {
    this.root.replaceChildren(
      this.renderHeader(),
      this.renderErrorBanner(),
      this.renderChat(),
      this.renderToast(),
      this.renderQuestionForm(),
    );
  }

  private renderHeader(): HTMLElement {
    const header = document.createElement("header");
    const title = document.createElement("h1");
    title.textContent = "Project Regulations Assistant";
    const tagline = document.createElement("p");
    tagline.className = "tagline";
    tagline.textContent = "Ask about rules, meetings, grading and examinations.";
    header.append(title, tagline);
    return header;
  }

  private renderErrorBanner(): HTMLElement {
    const banner = document.createElement("div");
    banner.id = "error-banner";
    if (!this.state.error) {
      banner.hidden = true;
      return banner;
    }
    banner.className = "error-banner";
    const text = document.createElement("span");
    text.textContent = this.state.error;
    const retry = document.createElement("button");
    retry.id = "retry-button";
    retry.textContent = "Retry";
    retry.addEventListener("click", () => this.retry());
    banner.append(text, retry);
    return banner;
  }

  private renderChat(): HTMLElement {
    const chat = document.createElement("div");
    chat.id = "chat";
    this.state.turns.forEach((turn, position) => {
      chat.append(this.renderTurn(turn, position));
    });
    if (this.state.busy) {
      const thinking = document.createElement("div");
      thinking.className = "turn thinking";
      thinking.textContent = "Looking that up…";
      chat.append(thinking);
    }
    return chat;
  }

  private renderTurn(turn: ChatTurn, position: number): HTMLElement {
    const element = document.createElement("div");
    element.className = `turn ${turn.role}`;
    const bubble = document.createElement("div");
    bubble.className = "bubble";
    bubble.textContent = turn.text;
    element.append(bubble);

    if (turn.role === "assistant") {
      if (turn.sources.length > 0) {
        element.append(this.renderSources(turn));
      }
      if (turn.elapsedMs !== null) {
        const elapsed = document.createElement("span");
        elapsed.className = "elapsed";
        elapsed.textContent = `${(turn.elapsedMs / 1000).toFixed(1)} s`;
        element.append(elapsed);
      }
      element.append(this.renderStars(turn, position));
    }
    if (
      turn.role === "clarification" &&
      this.state.awaitingClarification &&
      position === this.state.turns.length - 1
    ) {
      element.append(this.renderClarifyForm());
    }
    return element;
  }

  private renderSources(turn: ChatTurn): HTMLElement {
    const sources = document.createElement("div");
    sources.className = "sources";
    for (const source of turn.sources) {
      const badge = document.createElement("span");
      badge.className = "source-badge";
      badge.textContent = `${source.chunk_id} (${source.score.toFixed(2)})`;
      sources.append(badge);
    }
    return sources;
  }

  private renderStars(turn: ChatTurn, position: number): HTMLElement {
    const stars = document.createElement("div");
    stars.className = turn.ratingLocked ? "stars locked" : "stars";
    stars.setAttribute("aria-label", "How helpful was this answer?");
    for (let value = 1; value <= 5; value += 1) {
      const star = document.createElement("button");
      star.type = "button";
      star.dataset.value = String(value);
      star.textContent = turn.rating !== null && value <= turn.rating ? "★" : "☆";
      star.disabled = turn.ratingLocked;
      star.addEventListener("click", () => void this.submitRating(position, value));
      stars.append(star);
    }
    return stars;
  }

  private renderClarifyForm(): HTMLElement {
    const form = document.createElement("form");
    form.className = "clarify-form";
    const input = document.createElement("input");
    input.className = "clarify-input";
    input.placeholder = "Type your reply…";
    input.disabled = this.state.busy;
    const send = document.createElement("button");
    send.type = "submit";
    send.className = "clarify-send";
    send.textContent = "Reply";
    send.disabled = this.state.busy;
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.sendClarification(input.value);
    });
    form.append(input, send);
    return form;
  }

  private renderToast(): HTMLElement {
    const toast = document.createElement("div");
    toast.id = "toast";
    if (!this.state.toast) {
      toast.hidden = true;
      return toast;
    }
    toast.className = "toast";
    toast.textContent = this.state.toast;
    return toast;
  }

  private renderQuestionForm(): HTMLElement {
    const form = document.createElement("form");
    form.id = "question-form";
    const input = document.createElement("input");
    input.id = "question-input";
    input.placeholder = "Ask about the project regulations…";
    input.value = this.state.restoredInput;
    input.disabled = !canAsk(this.state);
    const send = document.createElement("button");
    send.id = "send-button";
    send.type = "submit";
    send.textContent = "Send";
    send.disabled = !canAsk(this.state);
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.sendQuestion(input.value);
    });
    form.append(input, send);
    return form;
  }
}
