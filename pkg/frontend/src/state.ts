// Verdict-form state machine for one review item. Rules enforced here, not
// in the DOM layer: submit needs a pass/flag choice, a flag needs a
// criterion, and an unsubmitted draft survives navigation via storage.

import type { Criterion, ReviewItem } from './types.js';

export type Choice = 'pass' | 'flag' | null;

export interface Draft {
    choice: Choice;
    criterion: Criterion | null;
    note: string;
}

export interface StorageLike {
    getItem(key: string): string | null;
    setItem(key: string, value: string): void;
    removeItem(key: string): void;
}

const EMPTY_DRAFT: Draft = { choice: null, criterion: null, note: '' };

export class ReviewFormState {
    private draft: Draft = { ...EMPTY_DRAFT };

    constructor(
        readonly inspector: string,
        readonly item: ReviewItem,
        private storage: StorageLike | null = null,
    ) {
        const saved = this.storage?.getItem(this.draftKey());
        if (saved) {
            try {
                this.draft = { ...EMPTY_DRAFT, ...(JSON.parse(saved) as Draft) };
            } catch {
                // corrupt draft: start clean
            }
        }
    }

    private draftKey(): string {
        return `draft:${this.inspector}:${this.item.qa_id}`;
    }

    private persist(): void {
        this.storage?.setItem(this.draftKey(), JSON.stringify(this.draft));
    }

    get choice(): Choice {
        return this.draft.choice;
    }

    get criterion(): Criterion | null {
        return this.draft.criterion;
    }

    get note(): string {
        return this.draft.note;
    }

    choosePass(): void {
        this.draft.choice = 'pass';
        this.draft.criterion = null;
        this.persist();
    }

    chooseFlag(criterion: Criterion): void {
        this.draft.choice = 'flag';
        this.draft.criterion = criterion;
        this.persist();
    }

    setNote(note: string): void {
        this.draft.note = note;
        this.persist();
    }

    canSubmit(): boolean {
        if (this.draft.choice === null) return false;
        if (this.draft.choice === 'flag' && this.draft.criterion === null) return false;
        return true;
    }

    verdictBody(): { inspector: string; flagged: boolean; rule: Criterion | null; note: string | null } {
        if (!this.canSubmit()) {
            throw new Error('verdict form is incomplete');
        }
        return {
            inspector: this.inspector,
            flagged: this.draft.choice === 'flag',
            rule: this.draft.criterion,
            note: this.draft.note || null,
        };
    }

    clearDraft(): void {
        this.draft = { ...EMPTY_DRAFT };
        this.storage?.removeItem(this.draftKey());
    }
}
