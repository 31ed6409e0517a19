/** DOM wiring for the review app. All state lives in ReviewSession; this file
 * only renders it and forwards events. */

import { ApiClient } from './api.js';
import { isEditableTarget, mapKey } from './keyboard.js';
import { optionLines, progressLabel, recordViewModel } from './render.js';
import { ReviewSession } from './session.js';
import type { EditedFields } from './types.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function setText(id: string, value: string): void {
  el(id).textContent = value;
}

export class App {
  private session: ReviewSession;
  private editing = false;

  constructor(private readonly api = new ApiClient()) {
    const params = new URLSearchParams(window.location.search);
    this.session = new ReviewSession(
      this.api,
      {
        kind: params.get('kind') ?? undefined,
        modality: params.get('modality') ?? undefined,
      },
      params.get('reviewer') ?? 'reviewer',
    );
  }

  async start(): Promise<void> {
    document.addEventListener('keydown', (event) => this.onKey(event));
    el('accept-btn').addEventListener('click', () => void this.verdict('accept'));
    el('reject-btn').addEventListener('click', () => void this.verdict('reject'));
    el('edit-btn').addEventListener('click', () => this.openEditor());
    el('edit-save').addEventListener('click', () => void this.saveEdit());
    el('edit-cancel').addEventListener('click', () => this.closeEditor());
    el('retry-btn').addEventListener('click', () => void this.refresh());
    el('think-toggle').addEventListener('click', () => this.toggleThink());
    await this.session.start();
    this.render();
  }

  private onKey(event: KeyboardEvent): void {
    const action = mapKey({ key: event.key, inEditableTarget: isEditableTarget(event.target) });
    if (!action || this.editing) return;
    event.preventDefault();
    if (action === 'accept' || action === 'reject') void this.verdict(action);
    else if (action === 'edit') this.openEditor();
    else if (action === 'toggle-think') this.toggleThink();
  }

  private async verdict(kind: 'accept' | 'reject'): Promise<void> {
    await this.session.submit(kind);
    this.render();
  }

  private openEditor(): void {
    const entry = this.session.current();
    if (!entry) return;
    this.editing = true;
    (el<HTMLTextAreaElement>('edit-question')).value = entry.record.question;
    (el<HTMLTextAreaElement>('edit-think')).value = entry.record.thinking_trace ?? '';
    (el<HTMLTextAreaElement>('edit-answer')).value = entry.record.answer;
    (el<HTMLInputElement>('edit-gold')).value = entry.record.gold_letter ?? '';
    el('editor').hidden = false;
  }

  private closeEditor(): void {
    this.editing = false;
    el('editor').hidden = true;
  }

  private async saveEdit(): Promise<void> {
    const entry = this.session.current();
    if (!entry) return;
    const edited: EditedFields = {};
    const question = (el<HTMLTextAreaElement>('edit-question')).value;
    const think = (el<HTMLTextAreaElement>('edit-think')).value;
    const answer = (el<HTMLTextAreaElement>('edit-answer')).value;
    const gold = (el<HTMLInputElement>('edit-gold')).value;
    if (question !== entry.record.question) edited.question = question;
    if (think !== (entry.record.thinking_trace ?? '')) edited.thinking_trace = think;
    if (answer !== entry.record.answer) edited.answer = answer;
    if (gold !== (entry.record.gold_letter ?? '')) edited.gold_letter = gold;
    const advanced = await this.session.submit('edit', edited);
    if (advanced) this.closeEditor();
    this.render();
  }

  private toggleThink(): void {
    el('think-body').hidden = !el('think-body').hidden;
  }

  private async refresh(): Promise<void> {
    await this.session.refresh();
    this.render();
  }

  private render(): void {
    const banner = el('retry-banner');
    banner.hidden = this.session.retryBanner === null;
    if (this.session.retryBanner) setText('retry-message', this.session.retryBanner);

    const inline = el('inline-error');
    inline.hidden = this.session.inlineError === null;
    if (this.session.inlineError) inline.textContent = this.session.inlineError;

    setText(
      'progress',
      progressLabel(this.session.reviewedCount(), this.session.stats?.pending ?? null),
    );

    const entry = this.session.current();
    const done = el('done-state');
    const card = el('record-card');
    if (!entry) {
      card.hidden = true;
      done.hidden = false;
      const stats = this.session.stats;
      if (stats) {
        setText(
          'final-counters',
          `accepted ${stats.accepted} · rejected ${stats.rejected} · edited ${stats.edited}`,
        );
      }
      return;
    }
    done.hidden = true;
    card.hidden = false;
    const view = recordViewModel(entry);
    setText('record-id', view.recordId);
    setText('record-kind', `${view.kind} · ${view.modality}`);
    setText('question', view.question);
    setText('answer', view.answer);
    setText('flags', view.flags.join(', '));
    const scores = Object.entries(view.judgeScores)
      .map(([key, value]) => `${key}=${value}`)
      .join(' ');
    setText('judge-scores', scores);

    const optionsNode = el('options');
    optionsNode.innerHTML = '';
    for (const line of optionLines(view.options)) {
      const li = document.createElement('li');
      li.textContent = line;
      optionsNode.appendChild(li);
    }
    setText('gold-letter', view.goldLetter ? `gold: ${view.goldLetter}` : '');

    const thinkWrap = el('think-section');
    if (view.thinkingTrace) {
      thinkWrap.hidden = false;
      setText('think-body', view.thinkingTrace);
      el('think-body').hidden = view.thinkingCollapsed;
    } else {
      thinkWrap.hidden = true;
    }

    const pageImg = el<HTMLImageElement>('page-image');
    if (view.pageImageUrl) {
      pageImg.src = view.pageImageUrl;
      pageImg.hidden = false;
    } else {
      pageImg.hidden = true;
    }
    const figures = el('figures');
    figures.innerHTML = '';
    for (const url of view.figureUrls) {
      const img = document.createElement('img');
      img.src = url;
      img.className = 'figure-crop';
      figures.appendChild(img);
    }
  }
}

if (typeof window !== 'undefined' && typeof document !== 'undefined') {
  window.addEventListener('DOMContentLoaded', () => {
    void new App().start();
  });
}
